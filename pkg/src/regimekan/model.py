"""Two-layer regime-aware spline network: detector feeding regime-specific heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .detector import RegimeDetector, balance_loss, contrastive_loss, gumbel_noise, hard_labels, orthogonality_loss
from .forecaster import RegimeForecaster


@dataclass
class ModelConfig:
    input_dim: int = 8
    hidden_dim: int = 64
    n_regimes: int = 3
    tau: float = 1.0
    d: int = 8
    n_basis: int = 8
    theta: float = 0.01
    margin: float = 1.0
    seed: int = 0


@dataclass
class ForwardPass:
    yhat: ad.Node
    probs: ad.Node
    embedding: ad.Node
    logits: ad.Node


class RegimeKAN:
    def __init__(self, config: ModelConfig | None = None, lambda_sparsity: float = 0.001):
        self.config = config or ModelConfig()
        c = self.config
        self.detector = RegimeDetector(c.input_dim, c.hidden_dim, c.n_regimes, c.tau, seed=c.seed)
        self.forecaster = RegimeForecaster(c.input_dim, c.n_regimes, c.d, c.n_basis, c.theta, lambda_sparsity,
                                           seed=c.seed + 1)

    # -- parameters -----------------------------------------------------------
    def parameters(self) -> list[ad.Parameter]:
        return self.detector.parameters() + self.forecaster.parameters()

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {p.name: p.value.copy() for p in self.parameters()}
        for name, arr in {**self.detector.buffers(), **self.forecaster.buffers()}.items():
            out[name] = np.array(arr, copy=True)
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = set(self.state_dict())
        missing = expected - set(state)
        if missing:
            raise KeyError(f"missing parameter '{sorted(missing)[0]}'")
        extra = set(state) - expected
        if extra:
            raise KeyError(f"unexpected parameter '{sorted(extra)[0]}'")
        for p in self.parameters():
            if state[p.name].shape != p.value.shape:
                raise ValueError(f"shape mismatch for '{p.name}'")
            p.value = np.array(state[p.name], dtype=np.float64, copy=True)
            p.zero_grad()
        self.detector.spline.knots = np.array(state["detector.spline.knots"], dtype=np.float64, copy=True)
        self.forecaster.knots = np.array(state["forecaster.knots"], dtype=np.float64, copy=True)
        self.forecaster.theta = np.array(state["forecaster.theta"], dtype=np.float64, copy=True)

    @property
    def n_parameters(self) -> int:
        return int(sum(p.value.size for p in self.parameters()))

    # -- initialisation ---------------------------------------------------------
    def init_from_data(self, X: np.ndarray) -> None:
        self.detector.fit_knots(X)
        self.forecaster.fit_knots(X)

    def refit_forecaster_knots(self, X: np.ndarray) -> None:
        self.forecaster.fit_knots(X, self.hard_labels(X))

    # -- evaluation -------------------------------------------------------------
    def forward(self, X, rng: np.random.Generator | None = None) -> ForwardPass:
        """Graph forward pass. Gumbel noise is drawn from ``rng`` when given."""
        X = np.asarray(X, dtype=np.float64)
        noise = None if rng is None else gumbel_noise((X.shape[0], self.config.n_regimes), rng)
        probs, z, logits = self.detector.graph(X, noise)
        yhat = self.forecaster.graph(X, probs)
        return ForwardPass(yhat, probs, z, logits)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return self.forward(X).yhat.value

    def regime_probs(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return self.detector.graph(X)[0].value

    def hard_labels(self, X) -> np.ndarray:
        return hard_labels(self.regime_probs(X))

    def config_dict(self) -> dict:
        return asdict(self.config) | {"lambda_sparsity": self.forecaster.lambda_sparsity}


@dataclass
class LossTerms:
    total: ad.Node
    huber: float
    sparsity: float
    contrastive: float
    orthogonality: float
    balance: float

    def as_dict(self) -> dict:
        return {"total": float(self.total.value), "huber": self.huber, "sparsity": self.sparsity,
                "contrastive": self.contrastive, "orthogonality": self.orthogonality, "balance": self.balance}


def huber(residual, delta: float = 1.0):
    """Scalar/array Huber loss: quadratic within ``delta``, linear beyond."""
    if delta <= 0:
        raise ValueError("delta must be > 0")
    e = np.abs(np.asarray(residual, dtype=np.float64))
    out = np.where(e <= delta, 0.5 * e * e, delta * (e - 0.5 * delta))
    return float(out) if out.ndim == 0 else out


def composite_loss(model: RegimeKAN, out: ForwardPass, y, *, huber_delta=1.0, lambda_contrastive=0.01,
                   lambda_sparsity=0.001, lambda_orth=0.01, lambda_balance=0.05,
                   rng: np.random.Generator | None = None) -> LossTerms:
    """Mean Huber plus the four weighted regularisers.

    Terms with a zero weight are not built. ``LossTerms`` reports each term unweighted.
    """
    resid = out.yhat - np.asarray(y, dtype=np.float64)
    total = ad.mean(ad.huber(resid, huber_delta))
    terms = {"huber": float(total.value), "sparsity": 0.0, "contrastive": 0.0, "orthogonality": 0.0, "balance": 0.0}
    if lambda_sparsity:
        l1 = model.forecaster.l1_norm()
        terms["sparsity"] = float(l1.value)
        total = total + l1 * lambda_sparsity
    if lambda_contrastive:
        cl = contrastive_loss(out.embedding, hard_labels(out.logits.value), model.config.margin, rng)
        terms["contrastive"] = float(cl.value)
        total = total + cl * lambda_contrastive
    if lambda_orth:
        ol = orthogonality_loss(model.detector.W_r)
        terms["orthogonality"] = float(ol.value)
        total = total + ol * lambda_orth
    if lambda_balance:
        bl = balance_loss(out.probs)
        terms["balance"] = float(bl.value)
        total = total + bl * lambda_balance
    return LossTerms(total, **terms)
