"""Shapley attributions and regime-specific rule extraction."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import factorial
from typing import Callable

import numpy as np

Predictor = Callable[[np.ndarray], np.ndarray]

MAX_EXACT_FEATURES = 16


class IntractableError(ValueError):
    pass


@dataclass
class AttributionConfig:
    n_samples: int = 100
    gamma: float = 0.9
    T: int = 30
    baseline: np.ndarray | None = None
    top_m: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.n_samples < 1 or self.T < 1:
            raise ValueError("n_samples and T must be >= 1")


def _masked(x: np.ndarray, baseline: np.ndarray, masks: np.ndarray) -> np.ndarray:
    return np.where(masks, x[None, :], baseline[None, :])


def exact_shapley(f: Predictor, x, baseline, features=None) -> np.ndarray:
    """Shapley values by enumerating every coalition of ``features``.

    Features outside a coalition take their ``baseline`` value; columns not in
    ``features`` keep ``x``. ``f`` maps an ``(n, p)`` array to ``n`` outputs.
    Returns one value per entry of ``features``.
    """
    x = np.asarray(x, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    features = list(range(x.size)) if features is None else list(features)
    m = len(features)
    if m > MAX_EXACT_FEATURES:
        raise IntractableError(f"{m} features need 2^{m} evaluations; use mc_shapley")
    codes = np.arange(2**m)
    bits = ((codes[:, None] >> np.arange(m)[None, :]) & 1).astype(bool)
    masks = np.ones((codes.size, x.size), dtype=bool)
    masks[:, features] = bits
    values = np.asarray(f(_masked(x, baseline, masks)), dtype=np.float64).reshape(-1)
    sizes = bits.sum(axis=1)
    weight = np.array([factorial(s) * factorial(m - s - 1) / factorial(m) for s in range(m)])
    phi = np.zeros(m)
    for j in range(m):
        without = codes[~bits[:, j]]
        with_j = without | (1 << j)
        phi[j] = np.sum(weight[sizes[without]] * (values[with_j] - values[without]))
    return phi


def mc_shapley(f: Predictor, x, baseline, features=None, n_samples: int = 100, seed: int = 0) -> np.ndarray:
    """Permutation-sampling Shapley estimate.

    For each of ``n_samples`` random orderings, features switch from baseline to
    ``x`` one at a time and each records its marginal change in ``f``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    features = list(range(x.size)) if features is None else list(features)
    m = len(features)
    rng = np.random.default_rng(seed)
    perms = np.stack([rng.permutation(m) for _ in range(n_samples)])
    masks = np.ones((n_samples, m + 1, x.size), dtype=bool)
    masks[:, :, features] = False
    cols = np.asarray(features)
    for step in range(1, m + 1):
        masks[:, step, :] = masks[:, step - 1, :]
        masks[np.arange(n_samples), step, cols[perms[:, step - 1]]] = True
    values = np.asarray(f(_masked(x, baseline, masks.reshape(-1, x.size))), dtype=np.float64)
    values = values.reshape(n_samples, m + 1)
    deltas = np.diff(values, axis=1)
    phi = np.zeros(m)
    for s in range(n_samples):
        phi[perms[s]] += deltas[s]
    return phi / n_samples


def temporal_weights(T: int, gamma: float) -> np.ndarray:
    """``gamma^(T - t)`` for ``t = 1..T``, normalised to sum to one (last step heaviest)."""
    if T < 1:
        raise ValueError("empty attribution history")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    w = gamma ** np.arange(T - 1, -1, -1, dtype=np.float64)
    return w / w.sum()


def temporal_weight(phi_series, gamma: float) -> np.ndarray:
    phi_series = np.atleast_2d(np.asarray(phi_series, dtype=np.float64))
    if phi_series.size == 0:
        raise ValueError("empty attribution history")
    return temporal_weights(phi_series.shape[0], gamma) @ phi_series


def top_features(phi, m: int = 3) -> list[int]:
    """Indices of the ``m`` largest ``|phi|``; ties go to the lower index."""
    phi = np.asarray(phi, dtype=np.float64)
    return sorted(range(phi.size), key=lambda j: (-abs(phi[j]), j))[:m]


def format_rule(regime: int, names, y: float) -> str:
    return f"Regime {regime}: {' + '.join(names)} -> {y:+.6g}"


@dataclass
class RegimeRule:
    regime: int
    features: list[tuple[str, float]] = field(default_factory=list)
    rule_string: str = ""
    mean_predicted_return: float | None = None
    sample_index: list[int] = field(default_factory=list)
    weighted_phi: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "features": [{"name": n, "phi": float(p)} for n, p in self.features],
            "rule_string": self.rule_string,
            "mean_predicted_return": self.mean_predicted_return,
        }


@dataclass
class RegimeRules:
    rules: list[RegimeRule]
    feature_names: list[str]

    def to_json(self) -> list[dict]:
        return [r.to_dict() for r in self.rules]

    def strings(self) -> list[str]:
        return [r.rule_string for r in self.rules]


def extract_rules(model, X: np.ndarray, feature_names, config: AttributionConfig | None = None,
                  to_returns: Callable[[np.ndarray], np.ndarray] | None = None) -> RegimeRules:
    """Top-``m`` Shapley features per regime over its most confident samples.

    For each regime ``k`` the ``T`` rows with the highest ``p_k`` are taken in
    time order, attributed with :func:`mc_shapley`, and combined by
    :func:`temporal_weight`. ``Y_k`` is their mean prediction, mapped through
    ``to_returns`` when given.
    """
    config = config or AttributionConfig()
    X = np.asarray(X, dtype=np.float64)
    names = list(feature_names)
    baseline = np.zeros(X.shape[1]) if config.baseline is None else np.asarray(config.baseline, dtype=np.float64)
    probs = model.regime_probs(X) if len(X) else np.zeros((0, model.config.n_regimes))
    rules = []
    for k in range(model.config.n_regimes):
        if len(X) == 0:
            rules.append(RegimeRule(k, rule_string=f"Regime {k}: insufficient data"))
            continue
        n_take = min(config.T, len(X))
        top = np.sort(np.argsort(-probs[:, k], kind="stable")[:n_take])
        series = np.stack([
            mc_shapley(model.predict, X[i], baseline, n_samples=config.n_samples, seed=config.seed + 7919 * k + int(i))
            for i in top
        ])
        phi = temporal_weight(series, config.gamma)
        chosen = top_features(phi, config.top_m)
        preds = model.predict(X[top])
        if to_returns is not None:
            preds = to_returns(preds)
        y_k = float(np.mean(preds))
        rules.append(RegimeRule(
            regime=k,
            features=[(names[j], float(phi[j])) for j in chosen],
            rule_string=format_rule(k, [names[j] for j in chosen], y_k),
            mean_predicted_return=y_k,
            sample_index=top.tolist(),
            weighted_phi=phi.tolist(),
        ))
    return RegimeRules(rules, names)


def attribution_table(rules: RegimeRules) -> list[dict]:
    """Long-format rows ``{regime, feature, phi, share}`` for every feature."""
    rows = []
    for r in rules.rules:
        if not r.weighted_phi:
            continue
        phi = np.asarray(r.weighted_phi)
        total = np.abs(phi).sum()
        for name, v in zip(rules.feature_names, phi):
            rows.append({"regime": r.regime, "feature": name, "phi": float(v),
                         "share": float(abs(v) / total) if total > 0 else 0.0})
    return rows
