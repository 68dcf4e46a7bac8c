"""Spline numerics: hybrid linear+cubic activations and cubic B-spline bases."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

N_LINEAR = 3
N_CUBIC = 2


class DegenerateInput(ValueError):
    pass


class RefinementError(ValueError):
    pass


def init_knots_from_quantiles(samples, n_knots: int, lo_pct: float = 1.0, hi_pct: float = 99.0) -> np.ndarray:
    """Knots at evenly spaced percentiles between ``lo_pct`` and ``hi_pct``.

    Ties are separated by a minimal spacing so the result is strictly ascending.
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    samples = samples[np.isfinite(samples)]
    if n_knots < 2:
        raise ValueError("need at least two knots")
    if np.unique(samples).size < n_knots:
        raise DegenerateInput(f"need at least {n_knots} distinct sample values, got {np.unique(samples).size}")
    knots = np.percentile(samples, np.linspace(lo_pct, hi_pct, n_knots))
    spread = max(float(np.ptp(samples)), 1.0)
    eps = 1e-9 * spread
    for i in range(1, n_knots):
        if knots[i] <= knots[i - 1]:
            knots[i] = knots[i - 1] + eps
    return knots


def _ramp_activation(x, knots, w, v):
    """Reference evaluation (no graph) of the hybrid activation.

    ``knots`` has shape (..., N_LINEAR + 1) and broadcasts against ``x``.
    """
    lo, hi = knots[..., 0], knots[..., -1]
    xn = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    kn = (knots - lo[..., None]) / (hi - lo)[..., None]
    lin = 0.0
    for i in range(N_LINEAR):
        ramp = np.maximum(xn - kn[..., i], 0.0) - np.maximum(xn - kn[..., i + 1], 0.0)
        lin = lin + np.tanh(w[i]) * ramp
    cub = sum(0.5 * (1 + np.tanh(0.5 * v[i])) for i in range(N_CUBIC)) * xn**3
    return lin + cub


@dataclass
class SplineActivation:
    """Single-input hybrid activation ``f(x) = L(x) + C(x)``.

    ``L`` is a sum of ``tanh(w_i)``-weighted ramps between consecutive
    normalized knots, ``C = sum_i sigmoid(v_i) * x_norm**3``. The input is
    normalized to ``[0, 1]`` by the outer knots and clamped.
    """

    knots: np.ndarray
    w: ad.Parameter
    v: ad.Parameter

    @classmethod
    def create(cls, knots, w=None, v=None, name: str = "act") -> "SplineActivation":
        knots = np.asarray(knots, dtype=np.float64)
        if knots.shape != (N_LINEAR + 1,) or np.any(np.diff(knots) <= 0):
            raise ValueError(f"need {N_LINEAR + 1} strictly ascending knots")
        w = np.full(N_LINEAR, 0.5) if w is None else w
        v = np.full(N_CUBIC, -2.0) if v is None else v
        return cls(knots, ad.Parameter(w, f"{name}.w"), ad.Parameter(v, f"{name}.v"))

    @property
    def norm_range(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    def __call__(self, x):
        return _ramp_activation(np.asarray(x, dtype=np.float64), self.knots, self.w.value, self.v.value)

    def graph(self, x: ad.Node) -> ad.Node:
        """Differentiable evaluation on a graph node of any shape."""
        lo, hi = self.norm_range
        kn = (self.knots - lo) / (hi - lo)
        xn = ad.clip((x - lo) * (1.0 / (hi - lo)), 0.0, 1.0)
        tw = ad.tanh(self.w)
        out = None
        for i in range(N_LINEAR):
            ramp = ad.relu(xn - float(kn[i])) - ad.relu(xn - float(kn[i + 1]))
            term = ramp * ad.row(tw, i)
            out = term if out is None else out + term
        scale = ad.sum_(ad.sigmoid(self.v))
        return out + ad.cube(xn) * scale


def spline_forward(act: SplineActivation, x):
    return act(x)


class SplineStack:
    """One hybrid activation per column of a ``(batch, units)`` input."""

    def __init__(self, units: int, name: str = "spline", rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.units = units
        base = np.linspace(-2.0, 2.0, N_LINEAR + 1)
        self.knots = np.tile(base, (units, 1))
        self.w = ad.Parameter(rng.normal(0.5, 0.1, size=(N_LINEAR, units)), f"{name}.w")
        self.v = ad.Parameter(np.full((N_CUBIC, units), -2.0), f"{name}.v")

    def parameters(self):
        return [self.w, self.v]

    def fit_knots(self, pre_activations: np.ndarray) -> None:
        for j in range(self.units):
            self.knots[j] = init_knots_from_quantiles(pre_activations[:, j], N_LINEAR + 1)

    def unit(self, j: int) -> SplineActivation:
        return SplineActivation.create(self.knots[j], self.w.value[:, j], self.v.value[:, j], name=f"unit{j}")

    def numpy(self, u: np.ndarray) -> np.ndarray:
        lo, hi = self.knots[:, 0], self.knots[:, -1]
        span = hi - lo
        xn = np.clip((u - lo) / span, 0.0, 1.0)
        kn = (self.knots - lo[:, None]) / span[:, None]
        out = np.zeros_like(u)
        tw = np.tanh(self.w.value)
        for i in range(N_LINEAR):
            out += tw[i] * (np.maximum(xn - kn[:, i], 0.0) - np.maximum(xn - kn[:, i + 1], 0.0))
        sv = (0.5 * (1 + np.tanh(0.5 * self.v.value))).sum(axis=0)
        return out + sv * xn**3

    def graph(self, u: ad.Node) -> ad.Node:
        lo, hi = self.knots[:, 0], self.knots[:, -1]
        span = hi - lo
        kn = (self.knots - lo[:, None]) / span[:, None]
        xn = ad.clip(ad.mul_row(ad.add_row(u, -lo), 1.0 / span), 0.0, 1.0)
        tw = ad.tanh(self.w)
        out = None
        for i in range(N_LINEAR):
            ramp = ad.relu(ad.add_row(xn, -kn[:, i])) - ad.relu(ad.add_row(xn, -kn[:, i + 1]))
            term = ad.mul_row(ramp, ad.row(tw, i))
            out = term if out is None else out + term
        scale = ad.col_mean(ad.sigmoid(self.v)) * float(N_CUBIC)
        return out + ad.mul_row(ad.cube(xn), scale)


# ---------------------------------------------------------------------------
# B-splines
# ---------------------------------------------------------------------------


def _design(x: np.ndarray, knots: np.ndarray, degree: int, derivative: bool = False):
    """Cox-de Boor over a batch of independent knot vectors.

    ``x``: (n, d); ``knots``: (d, m). Returns basis values (n, d, m - degree - 1)
    and, if requested, their derivatives. Inputs are clamped to the boundary span.
    """
    m = knots.shape[1]
    lo = knots[:, degree]
    hi = knots[:, m - degree - 1]
    inside = (x > lo) & (x < hi)
    xc = np.clip(x, lo, hi)
    span = (xc[..., None] >= knots[None, :, :]).sum(axis=-1) - 1
    span = np.clip(span, degree, m - degree - 2)
    B = (np.arange(m - 1)[None, None, :] == span[..., None]).astype(np.float64)
    prev = B
    xe = xc[..., None]
    for d in range(1, degree + 1):
        left = knots[:, : m - 1 - d]
        den1 = knots[:, d : m - 1] - left
        den2 = knots[:, d + 1 : m] - knots[:, 1 : m - d]
        with np.errstate(divide="ignore", invalid="ignore"):
            w1 = np.where(den1 > 0, (xe - left) / den1, 0.0)
            w2 = np.where(den2 > 0, (knots[:, d + 1 : m] - xe) / den2, 0.0)
        prev = B
        B = w1 * B[..., :-1] + w2 * B[..., 1:]
    if not derivative:
        return B
    if degree == 0:
        return B, np.zeros_like(B)
    p = degree
    den1 = knots[:, p : m - 1] - knots[:, : m - 1 - p]
    den2 = knots[:, p + 1 : m] - knots[:, 1 : m - p]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(den1 > 0, p / den1, 0.0)
        b = np.where(den2 > 0, p / den2, 0.0)
    dB = a * prev[..., :-1] - b * prev[..., 1:]
    return B, dB * inside[..., None]


@dataclass
class BSplineBasis:
    """Clamped B-spline basis over strictly ascending ``breakpoints``.

    The padded knot vector repeats each boundary breakpoint ``degree + 1``
    times, giving ``K = len(breakpoints) - 1 + degree`` basis functions.
    """

    breakpoints: np.ndarray
    degree: int = 3

    def __post_init__(self):
        self.breakpoints = np.asarray(self.breakpoints, dtype=np.float64)
        if self.breakpoints.ndim != 1 or self.breakpoints.size < 2:
            raise ValueError("need at least two breakpoints")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ValueError("breakpoints must be strictly ascending")

    @classmethod
    def uniform(cls, lo: float, hi: float, n_basis: int, degree: int = 3) -> "BSplineBasis":
        return cls(np.linspace(lo, hi, n_basis - degree + 1), degree)

    @classmethod
    def from_quantiles(cls, samples, n_basis: int, degree: int = 3) -> "BSplineBasis":
        return cls(init_knots_from_quantiles(samples, n_basis - degree + 1), degree)

    @property
    def K(self) -> int:
        return self.breakpoints.size - 1 + self.degree

    @property
    def knots(self) -> np.ndarray:
        b = self.breakpoints
        return np.concatenate([np.repeat(b[0], self.degree), b, np.repeat(b[-1], self.degree)])

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = _design(x.reshape(-1, 1), self.knots[None, :], self.degree)[:, 0, :]
        return out[0] if x.ndim == 0 else out.reshape(x.shape + (self.K,))

    def derivative(self, x):
        x = np.asarray(x, dtype=np.float64)
        _, d = _design(x.reshape(-1, 1), self.knots[None, :], self.degree, derivative=True)
        d = d[:, 0, :]
        return d[0] if x.ndim == 0 else d.reshape(x.shape + (self.K,))


def bspline_eval(basis: BSplineBasis, x):
    return basis(x)


def _refined_breakpoints(b: np.ndarray, n_new: int) -> np.ndarray:
    extra = n_new - b.size
    if extra <= 0:
        return b.copy()
    gaps = b.size - 1
    per_gap = np.full(gaps, extra // gaps)
    rest = extra % gaps
    if rest:
        per_gap[(np.arange(rest) * gaps) // rest] += 1
    pieces = []
    for i in range(gaps):
        seg = np.linspace(b[i], b[i + 1], per_gap[i] + 2)[:-1]
        pieces.append(seg)
    pieces.append(b[-1:])
    return np.concatenate(pieces)


def extend_grid(basis: BSplineBasis, coeffs, new_K: int, n_grid: int | None = None):
    """Refine a spline to ``new_K`` basis functions, keeping the function.

    Existing breakpoints are kept and new ones are inserted evenly inside the
    existing intervals (uniform in the quantile space the breakpoints were
    drawn from), so refinement is exact up to least-squares rounding.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (basis.K,):
        raise ValueError(f"expected {basis.K} coefficients")
    if new_K < basis.K:
        raise ValueError("new_K must be >= current K")
    if new_K == basis.K:
        return BSplineBasis(basis.breakpoints.copy(), basis.degree), coeffs.copy()
    new = BSplineBasis(_refined_breakpoints(basis.breakpoints, new_K - basis.degree + 1), basis.degree)
    n_grid = n_grid or max(50 * new_K, 1000)
    grid = np.linspace(basis.breakpoints[0], basis.breakpoints[-1], n_grid)
    A = new(grid)
    target = basis(grid) @ coeffs
    sol, _, rank, _ = np.linalg.lstsq(A, target, rcond=None)
    if rank < new.K:
        raise RefinementError(f"least-squares system is rank deficient ({rank} < {new.K})")
    return new, sol
