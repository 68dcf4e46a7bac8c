import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from regimekan import autodiff as ad
from regimekan.splines import (BSplineBasis, DegenerateInput, SplineActivation, bspline_eval, extend_grid,
                               init_knots_from_quantiles, spline_forward)
from oracles import cox_de_boor


def test_quantile_knots_on_uniform_grid():
    knots = init_knots_from_quantiles(np.arange(101.0), 3)
    np.testing.assert_allclose(knots, [1.0, 50.0, 99.0], atol=1e-9)


def test_quantile_knots_robust_to_outlier():
    rng = np.random.default_rng(0)
    x = rng.normal(size=1000)
    a = init_knots_from_quantiles(x, 4)
    b = init_knots_from_quantiles(np.append(x, 1e6), 4)
    spacing = np.min(np.diff(a))
    assert np.all(np.abs(a - b) < spacing)


def test_quantile_knots_degenerate():
    with pytest.raises(DegenerateInput):
        init_knots_from_quantiles(np.ones(50), 4)


def test_quantile_knots_ties_strictly_ascending():
    x = np.array([0.0] * 50 + [1.0, 2.0, 3.0, 4.0] * 2)
    knots = init_knots_from_quantiles(x, 4)
    assert np.all(np.diff(knots) > 0)


def act(w, v, knots=(0.0, 1.0, 2.0, 3.0)):
    return SplineActivation.create(np.array(knots), np.array(w, float), np.array(v, float))


def test_activation_vanishes_with_zero_weights():
    a = act([0, 0, 0], [-1000, -1000])
    x = np.linspace(-5, 5, 101)
    np.testing.assert_allclose(spline_forward(a, x), 0.0, atol=1e-300)


def test_activation_zero_at_or_below_first_knot():
    a = act([0.4, -0.2, 1.0], [0.3, 0.1])
    assert spline_forward(a, 0.0) == 0.0
    assert spline_forward(a, -7.0) == 0.0


def test_activation_monotone_for_positive_w():
    a = act([0.3, 0.8, 0.1], [-0.5, 0.5])
    y = spline_forward(a, np.linspace(0.0, 3.0, 1000))
    assert np.all(np.diff(y) >= 0)


def test_activation_reference_values():
    # knots normalise to (0, 1/3, 2/3, 1); x = 1.5 -> x_norm = 0.5
    a = act([0.5, 1.0, -0.3], [0.0, 2.0])
    ramp = np.tanh(0.5) * (1 / 3) + np.tanh(1.0) * (0.5 - 1 / 3)
    cubic = (0.5 + 1 / (1 + np.exp(-2.0))) * 0.125
    assert spline_forward(a, 1.5) == pytest.approx(ramp + cubic, rel=1e-12)


def test_activation_continuity():
    a = act([0.5, -1.0, 0.7], [0.2, -0.4])
    x = np.random.default_rng(1).uniform(-1, 4, 100)
    assert np.max(np.abs(a(x + 1e-8) - a(x))) < 1e-6


def test_activation_graph_matches_numpy_and_gradients():
    rng = np.random.default_rng(2)
    a = act(rng.normal(size=3), rng.normal(size=2))
    x = rng.uniform(-0.5, 3.5, size=100)
    kn = np.array([0.0, 1.0, 2.0, 3.0])
    x[np.min(np.abs(x[:, None] - kn[None, :]), axis=1) < 1e-3] = 1.5
    np.testing.assert_allclose(a.graph(ad.constant(x)).value, a(x), rtol=1e-14)
    assert ad.check_gradients(lambda: ad.sum_(ad.square(a.graph(ad.constant(x)))), [a.w, a.v], 1e-6) < 1e-4


def test_knots_must_ascend():
    with pytest.raises(ValueError):
        act([0, 0, 0], [0, 0], knots=(0.0, 2.0, 1.0, 3.0))


def test_bspline_matches_cox_de_boor_oracle():
    basis = BSplineBasis(np.array([-1.0, -0.2, 0.5, 1.3, 2.0]), 3)
    t = basis.knots
    xs = np.random.default_rng(3).uniform(-1.0, 1.999, 200)
    B = bspline_eval(basis, xs)
    ref = np.array([[cox_de_boor(t, k, 3, x) for k in range(basis.K)] for x in xs])
    np.testing.assert_allclose(B, ref, atol=1e-12)


@given(st.floats(-0.999, 0.999))
def test_partition_of_unity(x):
    basis = BSplineBasis.uniform(-1.0, 1.0, 8)
    B = bspline_eval(basis, x)
    assert abs(np.sum(B) - 1.0) < 1e-9
    assert np.all(B >= 0)


def test_local_support():
    basis = BSplineBasis.uniform(0.0, 1.0, 8)
    t = basis.knots
    xs = np.linspace(0, 0.999, 500)
    B = bspline_eval(basis, xs)
    for k in range(basis.K):
        outside = (xs < t[k]) | (xs >= t[k + 4])
        assert np.all(B[outside, k] == 0)


def test_degree_zero_is_interval_indicator():
    basis = BSplineBasis(np.array([0.0, 1.0, 2.5, 4.0]), 0)
    B = bspline_eval(basis, np.array([0.5, 1.0, 3.9]))
    np.testing.assert_array_equal(B, [[1, 0, 0], [0, 1, 0], [0, 0, 1]])


def test_clamped_outside_range():
    basis = BSplineBasis.uniform(0.0, 1.0, 6)
    np.testing.assert_allclose(bspline_eval(basis, -3.0), bspline_eval(basis, 0.0))
    assert np.all(np.isfinite(bspline_eval(basis, 1e9)))


def test_extend_grid_identity():
    basis = BSplineBasis.uniform(0.0, 1.0, 7)
    c = np.random.default_rng(4).normal(size=7)
    nb, nc = extend_grid(basis, c, 7)
    np.testing.assert_allclose(nc, c, atol=1e-10)
    np.testing.assert_allclose(nb.knots, basis.knots)


def test_extend_grid_five_to_ten():
    basis = BSplineBasis.uniform(-2.0, 3.0, 5)
    c = np.random.default_rng(5).normal(size=5)
    nb, nc = extend_grid(basis, c, 10)
    assert nb.K == 10
    x = np.linspace(-2.0, 3.0, 1000)
    assert np.max(np.abs(bspline_eval(nb, x) @ nc - bspline_eval(basis, x) @ c)) < 1e-6
    assert np.max(np.abs(bspline_eval(nb, x[:-1]).sum(axis=1) - 1)) < 1e-9


def test_extend_grid_rejects_shrink():
    basis = BSplineBasis.uniform(0.0, 1.0, 8)
    with pytest.raises(ValueError):
        extend_grid(basis, np.zeros(8), 6)


def test_derivative_matches_finite_difference():
    basis = BSplineBasis.uniform(0.0, 1.0, 8)
    x = np.random.default_rng(6).uniform(0.01, 0.99, 50)
    h = 1e-6
    fd = (bspline_eval(basis, x + h) - bspline_eval(basis, x - h)) / (2 * h)
    np.testing.assert_allclose(basis.derivative(x), fd, atol=1e-5)
