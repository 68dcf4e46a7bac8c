import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from regimekan import autodiff as ad
from regimekan.forecaster import ContractError, RegimeForecaster, soft_threshold


def test_soft_threshold_examples():
    assert soft_threshold(0.5, 0.2) == pytest.approx(0.3)
    assert soft_threshold(-0.5, 0.2) == pytest.approx(-0.3)
    assert soft_threshold(0.1, 0.2) == 0.0
    with pytest.raises(ValueError):
        soft_threshold(0.1, -0.1)


@given(st.floats(-10, 10), st.floats(0, 10))
def test_soft_threshold_shrinks(w, theta):
    out = soft_threshold(w, theta)
    assert abs(out) <= abs(w)
    assert out == 0 or np.sign(out) == np.sign(w)


@pytest.fixture
def fore():
    f = RegimeForecaster(input_dim=4, n_regimes=3, d=3, n_basis=6, seed=0)
    f.fit_knots(np.random.default_rng(0).normal(size=(200, 4)))
    return f


def test_zero_weights_zero_head(fore):
    for w in fore.w:
        w.value[:] = 0
    x = np.random.default_rng(1).normal(size=(10, 4))
    np.testing.assert_array_equal(fore.regime_head(1, x), 0.0)


def test_constant_phi_head():
    f = RegimeForecaster(input_dim=4, n_regimes=1, d=1, n_basis=6, theta=0.0, seed=0)
    f.beta[0].value[:] = 1.0
    f.w[0].value[:] = 0.5
    x = np.random.default_rng(2).normal(size=(20, 4))
    np.testing.assert_allclose(f.regime_head(0, x), 0.5, atol=1e-12)


def test_full_threshold_zeroes_head(fore):
    fore.theta[2] = np.max(np.abs(fore.w[2].value))
    np.testing.assert_array_equal(fore.regime_head(2, np.ones((3, 4))), 0.0)


def test_invalid_regime(fore):
    with pytest.raises(IndexError):
        fore.regime_head(3, np.zeros(4))


def test_forecast_mixture(fore):
    x = np.random.default_rng(3).normal(size=4)
    heads = [fore.regime_head(i, x) for i in range(3)]
    assert fore.forecast(x, [0, 0, 1]) == pytest.approx(heads[2], abs=1e-15)
    assert fore.forecast(x, [1 / 3] * 3) == pytest.approx(np.mean(heads), rel=1e-12)
    with pytest.raises(ContractError):
        fore.forecast(x, [0.5, 0.6, 0.0])
    with pytest.raises(ContractError):
        fore.forecast(x, [1.2, -0.2, 0.0])


def test_forecast_zero_heads(fore):
    for w in fore.w:
        w.value[:] = 0
    assert fore.forecast(np.ones(4), [0.2, 0.3, 0.5]) == 0.0


@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3))
def test_mixture_bound(w):
    if sum(w) == 0:
        return
    f = RegimeForecaster(input_dim=4, n_regimes=3, d=3, n_basis=6, seed=1)
    p = np.array(w) / sum(w)
    x = np.linspace(-1, 1, 4)
    heads = [f.regime_head(i, x) for i in range(3)]
    y = f.forecast(x, p)
    assert min(heads) - 1e-12 <= y <= max(heads) + 1e-12


def test_sparsity_penalty_examples():
    f = RegimeForecaster(input_dim=2, n_regimes=1, d=2, lambda_sparsity=0.001)
    f.w[0].value[:] = [0.5, -0.5]
    assert f.sparsity_penalty().value == pytest.approx(0.001)
    f.w[0].value[:] *= 2
    assert f.sparsity_penalty().value == pytest.approx(0.002)
    f.w[0].value[:] = 0
    assert f.sparsity_penalty().value == 0.0


def test_threshold_monotone(fore):
    counts = []
    for theta in np.linspace(0, 1, 11):
        fore.theta[:] = theta
        counts.append(sum(np.count_nonzero(fore.effective_weights(i)) for i in range(3)))
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_forecast_gradients(fore):
    rng = np.random.default_rng(4)
    X = rng.normal(size=(15, 4))
    probs = rng.dirichlet(np.ones(3), size=15)
    y = rng.normal(size=15)
    for w in fore.w:
        w.value[np.abs(np.abs(w.value) - 0.01) < 1e-3] = 0.2
    f = lambda: ad.mean(ad.square(fore.graph(X, probs) - y))
    assert ad.check_gradients(f, fore.parameters(), 1e-6) < 1e-4


def test_regime_specific_knots(fore):
    X = np.random.default_rng(5).normal(size=(300, 4))
    labels = np.repeat([0, 1, 2], 100)
    X[labels == 2] *= 3
    fore.fit_knots(X, labels)
    assert not np.allclose(fore.knots[0], fore.knots[2])
