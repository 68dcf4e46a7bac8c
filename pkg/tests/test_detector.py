import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from regimekan import autodiff as ad
from regimekan.detector import (RegimeDetector, balance_loss, contrastive_loss, hard_labels, orthogonality_loss,
                                sample_pairs, softmax_probs)


def ref_softmax(v, tau=1.0):
    e = [math.exp(x / tau) for x in v]
    return [x / sum(e) for x in e]


def test_equal_logits_uniform():
    np.testing.assert_allclose(softmax_probs([0.7, 0.7, 0.7]), [1 / 3] * 3, atol=1e-15)


def test_softmax_reference_values():
    p = softmax_probs([2.0, 1.0, 0.0])
    np.testing.assert_allclose(p, ref_softmax([2, 1, 0]), rtol=1e-12)
    np.testing.assert_allclose(p, [0.665, 0.245, 0.090], atol=5e-4)


def test_low_temperature_confident():
    assert softmax_probs([2.0, 1.0, 0.0], tau=0.1).max() > 0.9999


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_temperature_monotone_and_argmax_invariant(logits):
    if max(logits) - min(logits) < 1e-6:
        return
    p01, p1, p10 = (softmax_probs(logits, t) for t in (0.1, 1.0, 10.0))
    assert p01.max() >= p1.max() - 1e-12 >= p10.max() - 2e-12
    assert hard_labels(p01) == hard_labels(p1) == hard_labels(p10)


def test_hard_label_tie_breaks_low():
    assert hard_labels(np.array([0.4, 0.4, 0.2])) == 0


@pytest.fixture
def detector():
    d = RegimeDetector(input_dim=8, hidden_dim=16, n_regimes=3, seed=0)
    d.fit_knots(np.random.default_rng(0).normal(size=(200, 8)))
    return d


def test_detect_outputs_on_simplex(detector):
    X = np.random.default_rng(1).normal(size=(50, 8))
    out = detector.detect(X)
    assert np.all(out.probs >= 0)
    np.testing.assert_allclose(out.probs.sum(axis=1), 1.0, atol=1e-9)
    assert out.embedding.shape == (50, 16)
    np.testing.assert_array_equal(out.hard_label, out.probs.argmax(axis=1))
    single = detector.detect(X[0])
    assert isinstance(single.hard_label, int)
    np.testing.assert_allclose(single.probs, out.probs[0])


def test_detect_shape_error(detector):
    with pytest.raises(ad.ShapeError):
        detector.detect(np.zeros(5))


def test_train_mode_noise(detector):
    x = np.random.default_rng(2).normal(size=(4, 8))
    detector.train_mode = True
    a = detector.detect(x, noise_seed=3).probs
    b = detector.detect(x, noise_seed=3).probs
    c = detector.detect(x, noise_seed=4).probs
    detector.train_mode = False
    ev = detector.detect(x).probs
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    assert not np.allclose(a, ev)
    np.testing.assert_array_equal(ev, detector.detect(x).probs)


def test_tau_must_be_positive():
    with pytest.raises(ValueError):
        RegimeDetector(tau=0.0)


def test_contrastive_examples():
    z = np.zeros((2, 4))
    assert contrastive_loss(z, [0, 0]).value == 0.0
    far = np.array([[0.0, 0.0], [3.0, 0.0]])
    assert contrastive_loss(far, [0, 1], margin=1.0).value == 0.0
    half = np.array([[0.0, 0.0], [0.5, 0.0]])
    assert contrastive_loss(half, [1, 1]).value == pytest.approx(0.25)
    assert contrastive_loss(np.zeros((1, 3)), [0]).value == 0.0


def test_contrastive_push_term():
    z = np.array([[0.0, 0.0], [0.25, 0.0]])
    assert contrastive_loss(z, [0, 1], margin=1.0).value == pytest.approx(0.75**2, rel=1e-9)


def test_pair_sampling():
    i, j = sample_pairs(5, None)
    assert len(i) == 10
    i, j = sample_pairs(100, np.random.default_rng(0))
    assert len(i) == 512 and np.all(i != j)


def test_orthogonality_examples():
    assert orthogonality_loss([np.eye(4)]).value == 0.0
    assert orthogonality_loss([2 * np.eye(3)]).value == pytest.approx(27.0)
    q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(6, 6)))
    assert orthogonality_loss([q, q.T]).value < 1e-12
    with pytest.raises(ad.ShapeError):
        orthogonality_loss([np.zeros((2, 3))])


def test_balance_examples():
    assert balance_loss(np.full((4, 3), 1 / 3)).value == pytest.approx(0.0, abs=1e-15)
    assert balance_loss(np.array([[1.0, 0.0, 0.0]])).value == pytest.approx(math.log(3))


@given(st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3))
def test_balance_non_negative(w):
    p = np.array(w) / sum(w)
    assert balance_loss(p[None, :]).value >= -1e-15


def test_detector_gradients_with_regularisers(detector):
    rng = np.random.default_rng(5)
    X = rng.normal(size=(12, 8))
    labels = rng.integers(0, 3, 12)
    target = rng.normal(size=(12, 3))

    def loss():
        probs, z, _ = detector.graph(X)
        fit = ad.mean(ad.row_sum(ad.square(probs - target)))
        return (fit + contrastive_loss(z, labels, 1.0) * 0.3 + orthogonality_loss(detector.W_r) * 0.01
                + balance_loss(probs) * 0.5)

    assert ad.check_gradients(loss, detector.parameters(), 1e-6) < 1e-4
