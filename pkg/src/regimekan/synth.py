"""Regime-switching return generators with synthetic OHLCV output.

Two ground-truth processes: a Hamilton-style Markov switching mean/variance
model, and a two-regime logistic smooth transition autoregression driven by
the lagged return. Both return a :class:`~regimekan.data.MarketFrame` built
from compounded prices so the feature pipeline can run on them unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import MarketFrame, frame_from_arrays, write_ohlcv


class SpecError(ValueError):
    pass


@dataclass
class MarkovSpec:
    A: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    T: int
    seed: int = 0
    start_regime: int | None = None
    start_price: float = 100.0
    range_scale: float = 0.5

    def validate(self):
        A = np.asarray(self.A, dtype=np.float64)
        k = len(self.mu)
        if A.shape != (k, k):
            raise SpecError(f"transition matrix must be {k}x{k}")
        if np.any(A < 0) or np.any(np.abs(A.sum(axis=1) - 1.0) > 1e-12):
            raise SpecError("transition matrix rows must be non-negative and sum to 1")
        if len(self.sigma) != k or np.any(np.asarray(self.sigma) <= 0):
            raise SpecError("need one positive sigma per regime")
        if self.T < 2:
            raise SpecError("T must be >= 2")


@dataclass
class TransitionSpec:
    gamma: float
    c: float
    mu0: float
    mu1: float
    phi0: np.ndarray = field(default_factory=lambda: np.array([0.0]))
    phi1: np.ndarray = field(default_factory=lambda: np.array([0.0]))
    sigma: float = 0.01
    T: int = 1000
    seed: int = 0
    start_price: float = 100.0
    range_scale: float = 0.5


def logistic_transition(s, gamma: float, c: float):
    """``G(s) = 1 / (1 + exp(-gamma (s - c)))``."""
    z = -gamma * (np.asarray(s, dtype=np.float64) - c)
    return 0.5 * (1.0 - np.tanh(0.5 * z))


def stationary_distribution(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    vals, vecs = np.linalg.eig(A.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    return v / v.sum()


def synthesize_ohlcv(returns, vol, rng: np.random.Generator, start_price=100.0, range_scale=0.5,
                     start_date="2000-01-03") -> MarketFrame:
    """Prices compounded from ``returns``; open is the previous close.

    High and low extend beyond the open/close body by ``|N(0, (range_scale * vol)^2)|``
    fractions of the close. Volume is log-normal.
    """
    r = np.asarray(returns, dtype=np.float64)
    vol = np.broadcast_to(np.asarray(vol, dtype=np.float64), r.shape)
    close = start_price * np.cumprod(1.0 + r)
    open_ = np.concatenate([[start_price], close[:-1]])
    up = np.abs(rng.normal(0.0, range_scale * vol))
    down = np.abs(rng.normal(0.0, range_scale * vol))
    high = np.maximum(open_, close) + up * close
    low = np.minimum(open_, close) - down * close
    low = np.maximum(low, 1e-6 * close)
    volume = np.round(np.exp(rng.normal(13.0, 0.3, size=r.size)))
    dates = pd.bdate_range(start=start_date, periods=r.size).date
    return frame_from_arrays(dates, open_, high, low, close, volume, source_id="synthetic")


def gen_markov(spec: MarkovSpec):
    """Returns ``(returns, labels, frame)`` for a Markov switching series."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    A = np.asarray(spec.A, dtype=np.float64)
    mu = np.asarray(spec.mu, dtype=np.float64)
    sigma = np.asarray(spec.sigma, dtype=np.float64)
    k = mu.size
    cum = np.cumsum(A, axis=1)
    labels = np.empty(spec.T, dtype=np.int64)
    if spec.start_regime is None:
        labels[0] = rng.choice(k, p=stationary_distribution(A))
    else:
        labels[0] = spec.start_regime
    u = rng.random(spec.T)
    for t in range(1, spec.T):
        labels[t] = min(int(np.searchsorted(cum[labels[t - 1]], u[t], side="right")), k - 1)
    returns = mu[labels] + sigma[labels] * rng.standard_normal(spec.T)
    frame = synthesize_ohlcv(returns, sigma[labels], rng, spec.start_price, spec.range_scale)
    return returns, labels, frame


def gen_smooth_transition(spec: TransitionSpec):
    """Returns ``(returns, G path, frame)``; ``G_t`` is driven by ``y_{t-1}``."""
    rng = np.random.default_rng(spec.seed)
    phi0 = np.atleast_1d(np.asarray(spec.phi0, dtype=np.float64))
    phi1 = np.atleast_1d(np.asarray(spec.phi1, dtype=np.float64))
    p = max(phi0.size, phi1.size)
    phi0 = np.pad(phi0, (0, p - phi0.size))
    phi1 = np.pad(phi1, (0, p - phi1.size))
    y = np.zeros(spec.T + p)
    G = np.zeros(spec.T)
    eps = spec.sigma * rng.standard_normal(spec.T)
    for t in range(spec.T):
        lags = y[t : t + p][::-1]
        g = float(logistic_transition(y[t + p - 1], spec.gamma, spec.c))
        G[t] = g
        y[t + p] = spec.mu0 + phi0 @ lags + g * (spec.mu1 + phi1 @ lags) + eps[t]
    returns = y[p:]
    frame = synthesize_ohlcv(returns, spec.sigma, rng, spec.start_price, spec.range_scale)
    return returns, G, frame


def write_simulation(frame: MarketFrame, labels, path, extra: dict | None = None) -> str:
    """Write the OHLCV file plus a ``<stem>.labels.json`` sidecar."""
    write_ohlcv(frame, path)
    sidecar = str(path).rsplit(".", 1)[0] + ".labels.json"
    payload = {"dates": [str(d) for d in frame.dates], "labels": np.asarray(labels).tolist()}
    if extra:
        payload.update(extra)
    with open(sidecar, "w") as fh:
        json.dump(payload, fh)
    return sidecar
