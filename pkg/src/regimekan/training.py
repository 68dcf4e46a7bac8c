"""Training loop: AdamW, plateau LR schedule, global-norm clipping, early stopping."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, TextIO

import numpy as np

from . import autodiff as ad
from .data import FeatureMatrix
from .model import RegimeKAN, composite_loss, huber

logger = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.001
    weight_decay: float = 1e-5
    batch_size: int = 32
    max_epochs: int = 100
    early_stop_patience: int = 15
    scheduler_factor: float = 0.7
    scheduler_patience: int = 7
    grad_clip_norm: float = 0.5
    huber_delta: float = 1.0
    lambda_contrastive: float = 0.01
    lambda_sparsity: float = 0.001
    lambda_orth: float = 0.01
    lambda_balance: float = 0.05
    warmup_balance: bool = True
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        for name in ("lr", "weight_decay", "grad_clip_norm", "huber_delta", "lambda_contrastive",
                     "lambda_sparsity", "lambda_orth", "lambda_balance"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be > 0")
        for name in ("early_stop_patience", "scheduler_patience", "batch_size", "max_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def loss_weights(self) -> dict:
        return {
            "huber_delta": self.huber_delta,
            "lambda_contrastive": self.lambda_contrastive,
            "lambda_sparsity": self.lambda_sparsity,
            "lambda_orth": self.lambda_orth,
            "lambda_balance": self.lambda_balance,
        }


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    post_clip_norms: list[float] = field(default_factory=list)
    n_clipped: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        norms = d.pop("post_clip_norms")
        d["steps"] = len(norms)
        d["max_post_clip_norm"] = max(norms) if norms else 0.0
        return d


class AdamW:
    """Adam with decoupled weight decay (weights shrink by ``lr * wd`` before the moment step)."""

    def __init__(self, params, lr=1e-3, weight_decay=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.weight_decay, self.beta1, self.beta2, self.eps = lr, weight_decay, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.value = p.value * (1 - self.lr * self.weight_decay)
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def global_grad_norm(params) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))


def clip_grad_norm(params, max_norm: float) -> tuple[float, float]:
    """Scale gradients in place; returns ``(norm before, norm after)``."""
    norm = global_grad_norm(params)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params:
            p.grad = p.grad * scale
    return norm, global_grad_norm(params)


class PlateauSchedule:
    """Multiply the LR by ``factor`` once ``patience`` consecutive epochs fail to improve."""

    def __init__(self, factor=0.7, patience=7):
        self.factor, self.patience = factor, patience
        self.best = float("inf")
        self.stale = 0

    def step(self, metric: float, lr: float) -> float:
        if metric < self.best:
            self.best = metric
            self.stale = 0
            return lr
        self.stale += 1
        if self.stale >= self.patience:
            self.stale = 0
            return lr * self.factor
        return lr


def validation_loss(model: RegimeKAN, X: np.ndarray, y: np.ndarray, delta: float = 1.0) -> float:
    """Mean Huber loss of eval-mode predictions."""
    return float(np.mean(huber(model.predict(X) - y, delta)))


def train(model: RegimeKAN, data: FeatureMatrix, config: TrainConfig | None = None, *,
          val_loss_fn: Callable[[RegimeKAN, int], float] | None = None,
          log: TextIO | None = None, init: bool = True) -> tuple[RegimeKAN, TrainReport]:
    """Fit ``model`` on the train split, early-stopping on the val split.

    The returned model carries the parameters of the best validation epoch.
    ``val_loss_fn(model, epoch)`` replaces the default validation metric.
    """
    config = config or TrainConfig()
    Xtr, ytr = data.part("train")
    Xv, yv = data.part("val")
    if len(ytr) == 0 or len(yv) == 0:
        raise ValueError("training needs non-empty train and val splits")
    rng = np.random.default_rng(config.seed)
    if init:
        model.init_from_data(Xtr)
    params = model.parameters()
    opt = AdamW(params, config.lr, config.weight_decay, config.beta1, config.beta2, config.eps)
    sched = PlateauSchedule(config.scheduler_factor, config.scheduler_patience)
    report = TrainReport()
    best_state = model.state_dict()
    stale = 0
    weights = config.loss_weights()

    for epoch in range(1, config.max_epochs + 1):
        epoch_weights = dict(weights)
        if epoch == 1 and config.warmup_balance:
            epoch_weights["lambda_balance"] *= 2.0
        order = rng.permutation(len(ytr))
        batch_losses = []
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start : start + config.batch_size]
            opt.zero_grad()
            try:
                out = model.forward(Xtr[idx], rng=rng)
                terms = composite_loss(model, out, ytr[idx], rng=rng, **epoch_weights)
            except ad.NumericFault as exc:
                raise TrainingDiverged(f"non-finite value at epoch {epoch}, batch {b}: {exc}") from exc
            value = float(terms.total.value)
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}: {terms.as_dict()}")
            ad.backward(terms.total)
            pre, post = clip_grad_norm(params, config.grad_clip_norm)
            if not np.isfinite(pre):
                raise TrainingDiverged(f"non-finite gradient at epoch {epoch}, batch {b}: {terms.as_dict()}")
            report.n_clipped += pre > config.grad_clip_norm
            report.post_clip_norms.append(post)
            opt.step()
            batch_losses.append(value)

        if epoch == 1:
            model.refit_forecaster_knots(Xtr)

        train_loss = float(np.mean(batch_losses))
        val = val_loss_fn(model, epoch) if val_loss_fn else validation_loss(model, Xv, yv, config.huber_delta)
        report.train_loss.append(train_loss)
        report.val_loss.append(float(val))
        report.lr.append(opt.lr)
        report.stopped_epoch = epoch
        line = f"epoch {epoch:4d}  train {train_loss:.6f}  val {val:.6f}  lr {opt.lr:.3g}"
        logger.debug(line)
        if log is not None:
            log.write(line + "\n")

        if val < report.best_val_loss:
            report.best_val_loss = float(val)
            report.best_epoch = epoch
            best_state = model.state_dict()
            stale = 0
        else:
            stale += 1
        opt.lr = sched.step(val, opt.lr)
        if stale >= config.early_stop_patience:
            break

    model.load_state_dict(best_state)
    return model, report


def tune_sparsity(make_model: Callable[[float], RegimeKAN], data: FeatureMatrix, config: TrainConfig,
                  grid=(1e-4, 1e-3, 1e-2)):
    """Pick ``lambda_sparsity`` from ``grid`` by best validation loss.

    Returns ``(best_lambda, model, report)``.
    """
    best = None
    for lam in grid:
        cfg = TrainConfig(**{**asdict(config), "lambda_sparsity": lam})
        model, report = train(make_model(lam), data, cfg)
        if best is None or report.best_val_loss < best[2].best_val_loss:
            best = (lam, model, report)
    return best
