"""Regime-adaptive forecasting layer with sparse B-spline heads."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .splines import BSplineBasis, _design, init_knots_from_quantiles


class ContractError(ValueError):
    pass


def soft_threshold(w, theta):
    """``sign(w) * max(0, |w| - theta)``."""
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(theta < 0):
        raise ValueError("theta must be >= 0")
    w = np.asarray(w, dtype=np.float64)
    out = np.sign(w) * np.maximum(np.abs(w) - theta, 0.0)
    return float(out) if out.ndim == 0 else out


def spline_features(T, beta, knots: np.ndarray, degree: int = 3) -> ad.Node:
    """``out[:, j] = sum_k beta[j, k] B_k(T[:, j]; knots[j])`` as one graph node."""
    T, beta = ad.constant(T), ad.constant(beta)
    B, dB = _design(T.value, knots, degree, derivative=True)
    bv = beta.value
    out = np.einsum("ndk,dk->nd", B, bv)

    def d_T(g):
        return g * np.einsum("ndk,dk->nd", dB, bv)

    def d_beta(g):
        return np.einsum("ndk,nd->dk", B, g)

    return ad.custom(out, (T, beta), (d_T, d_beta), "spline_features")


class RegimeForecaster:
    """One sparse spline head per regime, mixed by regime probabilities.

    Head ``i`` projects the input to ``d`` scalars, expands each through its
    own cubic B-spline basis (``K`` functions, regime-specific knots), and
    sums them with soft-thresholded weights.
    """

    def __init__(self, input_dim: int = 8, n_regimes: int = 3, d: int = 8, n_basis: int = 8,
                 theta: float = 0.01, lambda_sparsity: float = 0.001, degree: int = 3, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.input_dim, self.n_regimes, self.d, self.n_basis, self.degree = input_dim, n_regimes, d, n_basis, degree
        self.lambda_sparsity = lambda_sparsity
        self.theta = np.full(n_regimes, float(theta))
        self.proj_W = [ad.Parameter(rng.normal(0, 1 / np.sqrt(input_dim), (input_dim, d)), f"forecaster.P{i}")
                       for i in range(n_regimes)]
        self.proj_b = [ad.Parameter(np.zeros(d), f"forecaster.c{i}") for i in range(n_regimes)]
        self.beta = [ad.Parameter(rng.normal(0, 0.3, (d, n_basis)), f"forecaster.beta{i}") for i in range(n_regimes)]
        self.w = [ad.Parameter(rng.normal(0, 0.3, d), f"forecaster.w{i}") for i in range(n_regimes)]
        basis = BSplineBasis.uniform(-2.5, 2.5, n_basis, degree)
        self.knots = np.tile(basis.knots, (n_regimes, d, 1))

    def parameters(self) -> list[ad.Parameter]:
        out = []
        for i in range(self.n_regimes):
            out += [self.proj_W[i], self.proj_b[i], self.beta[i], self.w[i]]
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        return {"forecaster.knots": self.knots, "forecaster.theta": self.theta}

    def basis(self, i: int, j: int) -> BSplineBasis:
        k = self.knots[i, j]
        return BSplineBasis(k[self.degree : k.size - self.degree], self.degree)

    def projections(self, i: int, X: np.ndarray) -> np.ndarray:
        return X @ self.proj_W[i].value + self.proj_b[i].value

    def fit_knots(self, X: np.ndarray, labels: np.ndarray | None = None, min_samples: int = 50) -> None:
        """Quantile breakpoints per regime and projection.

        Samples are taken from ``X`` rows labelled with the regime; regimes with
        fewer than ``min_samples`` rows fall back to all rows.
        """
        n_break = self.n_basis - self.degree + 1
        for i in range(self.n_regimes):
            rows = X if labels is None else X[labels == i]
            if len(rows) < min_samples:
                rows = X
            T = self.projections(i, rows)
            for j in range(self.d):
                b = init_knots_from_quantiles(T[:, j], n_break)
                self.knots[i, j] = BSplineBasis(b, self.degree).knots

    def _check(self, X):
        shape = X.shape if isinstance(X, ad.Node) else np.shape(X)
        if shape[-1] != self.input_dim:
            raise ad.ShapeError(f"expected {self.input_dim} features, got {shape[-1]}")

    def effective_weights(self, i: int) -> np.ndarray:
        return soft_threshold(self.w[i].value, self.theta[i])

    def head_graph(self, i: int, X) -> ad.Node:
        if not 0 <= i < self.n_regimes:
            raise IndexError(f"regime {i} outside 0..{self.n_regimes - 1}")
        self._check(X)
        T = ad.add_row(ad.matmul(ad.constant(X), self.proj_W[i]), self.proj_b[i])
        phi = spline_features(T, self.beta[i], self.knots[i], self.degree)
        w_eff = ad.soft_threshold(self.w[i], float(self.theta[i]))
        return ad.matmul(phi, w_eff)

    def graph(self, X, probs) -> ad.Node:
        probs = ad.constant(probs)
        out = None
        for i in range(self.n_regimes):
            term = ad.column(probs, i) * self.head_graph(i, X)
            out = term if out is None else out + term
        return out

    def regime_head(self, i: int, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        out = self.head_graph(i, np.atleast_2d(x)).value
        return float(out[0]) if x.ndim == 1 else out

    def forecast(self, x, probs) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
        if np.any(probs < -1e-6) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
            raise ContractError("regime probabilities must lie on the simplex")
        out = self.graph(np.atleast_2d(x), probs).value
        return float(out[0]) if x.ndim == 1 else out

    def l1_norm(self) -> ad.Node:
        total = None
        for w in self.w:
            term = ad.sum_(ad.abs_(w))
            total = term if total is None else total + term
        return total

    def sparsity_penalty(self) -> ad.Node:
        """``lambda * sum |w|`` over raw (unthresholded) head weights."""
        return self.l1_norm() * self.lambda_sparsity

    def zero_fraction(self) -> float:
        eff = np.concatenate([self.effective_weights(i) for i in range(self.n_regimes)])
        return float(np.mean(eff == 0.0))
