"""Regime detection layer: spline-activated encoder with a temperature softmax head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .splines import SplineStack


@dataclass
class RegimeOutput:
    probs: np.ndarray
    embedding: np.ndarray
    hard_label: np.ndarray | int


def gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    u = np.clip(rng.random(shape), 1e-12, 1.0 - 1e-12)
    return -np.log(-np.log(u))


def hard_labels(probs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. lowest index on ties
    return np.argmax(probs, axis=-1)


class RegimeDetector:
    """Feature vector -> regime probabilities and a hidden embedding.

    ``u = x W_in + b_in`` feeds one hybrid spline per hidden unit, then
    ``z = GELU(spline(u) W_hid + b_hid)`` is the embedding. Logit ``i`` is
    ``head(z)_i`` plus the mean of ``W_r[i] z``, which keeps every regime
    matrix on the gradient path.
    """

    def __init__(self, input_dim: int = 8, hidden_dim: int = 64, n_regimes: int = 3, tau: float = 1.0,
                 seed: int = 0):
        if tau <= 0:
            raise ValueError("tau must be > 0")
        rng = np.random.default_rng(seed)
        self.input_dim, self.hidden_dim, self.n_regimes, self.tau = input_dim, hidden_dim, n_regimes, tau
        self.train_mode = False
        H = hidden_dim
        self.W_in = ad.Parameter(rng.normal(0, 1 / np.sqrt(input_dim), (input_dim, H)), "detector.W_in")
        self.b_in = ad.Parameter(np.zeros(H), "detector.b_in")
        self.spline = SplineStack(H, "detector.spline", rng)
        self.W_hid = ad.Parameter(rng.normal(0, np.sqrt(2.0 / H), (H, H)), "detector.W_hid")
        self.b_hid = ad.Parameter(np.zeros(H), "detector.b_hid")
        self.W_r = [ad.Parameter(rng.normal(0, 1 / np.sqrt(H), (H, H)), f"detector.W_r{i}") for i in range(n_regimes)]
        self.W_head = ad.Parameter(rng.normal(0, 1 / np.sqrt(H), (H, n_regimes)), "detector.W_head")
        self.b_head = ad.Parameter(np.zeros(n_regimes), "detector.b_head")

    def parameters(self) -> list[ad.Parameter]:
        return [self.W_in, self.b_in, *self.spline.parameters(), self.W_hid, self.b_hid, *self.W_r,
                self.W_head, self.b_head]

    def buffers(self) -> dict[str, np.ndarray]:
        return {"detector.spline.knots": self.spline.knots}

    def fit_knots(self, X: np.ndarray) -> None:
        """Quantile-initialise every hidden unit's knots from its pre-activations on ``X``."""
        u = X @ self.W_in.value + self.b_in.value
        self.spline.fit_knots(u)

    def _check(self, X):
        X = np.asarray(X.value if isinstance(X, ad.Node) else X, dtype=np.float64)
        if X.shape[-1] != self.input_dim:
            raise ad.ShapeError(f"expected {self.input_dim} features, got {X.shape[-1]}")

    def embed(self, X) -> ad.Node:
        self._check(X)
        X = ad.constant(X)
        u = ad.add_row(ad.matmul(X, self.W_in), self.b_in)
        s = self.spline.graph(u)
        return ad.gelu(ad.add_row(ad.matmul(s, self.W_hid), self.b_hid))

    def logits(self, z: ad.Node) -> ad.Node:
        head = ad.add_row(ad.matmul(z, self.W_head), self.b_head)
        pooled = ad.stack_columns([ad.row_mean(ad.matmul(z, ad.transpose(W))) for W in self.W_r])
        return head + pooled

    def graph(self, X, noise: np.ndarray | None = None):
        """Returns ``(probs, embedding, logits)`` nodes; ``noise`` is added to the logits."""
        z = self.embed(X)
        logits = self.logits(z)
        scaled = logits if noise is None else logits + ad.constant(noise)
        probs = ad.softmax(scaled * (1.0 / self.tau))
        return probs, z, logits

    def detect(self, x, noise_seed: int | None = None) -> RegimeOutput:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = x[None, :] if single else x
        noise = None
        if self.train_mode:
            noise = gumbel_noise((X.shape[0], self.n_regimes), np.random.default_rng(noise_seed))
        probs, z, _ = self.graph(X, noise)
        p, e = probs.value, z.value
        if single:
            return RegimeOutput(p[0], e[0], int(hard_labels(p[0])))
        return RegimeOutput(p, e, hard_labels(p))


def softmax_probs(logits, tau: float = 1.0) -> np.ndarray:
    """Eval-mode regime probabilities for raw logits."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    return ad.softmax(ad.constant(np.asarray(logits, dtype=np.float64)) * (1.0 / tau)).value


def sample_pairs(n: int, rng: np.random.Generator | None, full_upto: int = 32, n_pairs: int = 512):
    if n <= full_upto:
        i, j = np.triu_indices(n, k=1)
        return i, j
    rng = rng or np.random.default_rng(0)
    i = rng.integers(0, n, n_pairs)
    j = (i + rng.integers(1, n, n_pairs)) % n
    return i, j


def contrastive_loss(z, labels, margin: float = 1.0, rng: np.random.Generator | None = None) -> ad.Node:
    """Mean over pairs of ``y d^2 + (1 - y) max(0, margin - d)^2``.

    ``y`` marks pairs sharing a hard label; ``d`` is the embedding distance.
    """
    z = ad.constant(z)
    labels = np.asarray(labels)
    n = z.shape[0]
    if n < 2:
        return ad.constant(0.0)
    i, j = sample_pairs(n, rng)
    same = (labels[i] == labels[j]).astype(np.float64)
    diff = ad.take_rows(z, i) - ad.take_rows(z, j)
    sq = ad.row_sum(ad.square(diff))
    dist = ad.sqrt(sq + 1e-12)
    hinge = ad.square(ad.relu(margin - dist))
    return ad.mean(sq * same + hinge * (1.0 - same))


def orthogonality_loss(mats) -> ad.Node:
    """Mean over matrices of ``||W W^T - I||_F^2``."""
    terms = []
    for W in mats:
        W = ad.constant(W)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ad.ShapeError(f"regime matrix must be square, got {W.shape}")
        gram = ad.matmul(W, ad.transpose(W))
        terms.append(ad.frobenius_sq(gram - np.eye(W.shape[0])))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def balance_loss(probs) -> ad.Node:
    """KL divergence of the batch-mean probability vector from uniform."""
    probs = ad.constant(probs)
    if probs.ndim == 1:
        return ad.kl_to_uniform(probs)
    return ad.kl_to_uniform(ad.col_mean(probs))
