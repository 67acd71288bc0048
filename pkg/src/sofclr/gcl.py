"""Global contrastive loss pieces and the per-sample moving-average estimator.

The averaged global contrastive loss is handled through the decomposition

    F_GCL(w) = f1(w) + (1/n) sum_i f2(g(w; x_i, S_i^-))   (+ a dropped constant)

with ``f1`` the negative cosine between two views of the same sample,
``f2(g) = tau * log(eps0' + g)`` and ``g`` the mean of ``exp(cos / tau)`` over
the negatives of an anchor. Stochastic training never sees ``g`` directly;
:class:`UEstimator` keeps one running estimate per sample instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import AugmentOp, augment
from .models import EncoderSpec, encode

__all__ = [
    "GCLConfig",
    "UEstimator",
    "LOG_GUARD",
    "pair_sim",
    "inner_batch_g",
    "batch_g",
    "f2",
    "f1_pair",
    "update_u",
    "exact_g",
    "gcl_exact",
    "minibatch_cl",
    "ENUMERATION_LIMIT",
]

LOG_GUARD = 1e-12
ENUMERATION_LIMIT = 10**6


@dataclass(frozen=True)
class GCLConfig:
    """Temperature ``tau`` and offset ``eps0``; ``set_size`` is |S_i^-|, used to
    derive ``eps0_prime = eps0 / set_size``."""

    tau: float = 0.5
    eps0: float = 0.0
    set_size: int = 1

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.eps0 < 0 or self.set_size < 1:
            raise ValueError("eps0 must be >= 0 and set_size >= 1")

    @property
    def eps0_prime(self) -> float:
        return self.eps0 / self.set_size


@dataclass(frozen=True, eq=False)
class UEstimator:
    values: np.ndarray
    gamma: float

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("u must be a vector")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    def update(self, idx, g_a, g_b) -> "UEstimator":
        """Vectorised moving-average update at indices ``idx`` (distinct)."""
        idx = np.asarray(idx, dtype=np.int64)
        g_a, g_b = np.asarray(g_a, dtype=np.float64), np.asarray(g_b, dtype=np.float64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.values.size):
            raise IndexError(f"sample index out of range [0, {self.values.size})")
        if np.any(g_a <= 0) or np.any(g_b <= 0):
            raise ValueError("inner estimates must be positive")
        v = self.values.copy()
        v[idx] = (1.0 - self.gamma) * v[idx] + 0.5 * self.gamma * (g_a + g_b)
        return UEstimator(v, self.gamma)


def update_u(u: UEstimator, i: int, g_a: float, g_b: float) -> UEstimator:
    """u_i <- (1 - gamma) u_i + gamma/2 (g_a + g_b); every other entry untouched."""
    if not 0 <= i < len(u):
        raise IndexError(f"sample index {i} out of range [0, {len(u)})")
    return u.update([i], [g_a], [g_b])


def pair_sim(spec: EncoderSpec, w, x_view, x_other, tau: float) -> float:
    """exp(E(x_view) . E(x_other) / tau)."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    z = encode(spec, w, np.stack([np.asarray(x_view, float), np.asarray(x_other, float)]))
    return float(np.exp(z[0] @ z[1] / tau))


def inner_batch_g(spec: EncoderSpec, w, anchor_view, negatives: Sequence, tau: float) -> float:
    """Mean of :func:`pair_sim` between the anchor view and each negative."""
    if len(negatives) == 0:
        raise ValueError("negative set is empty")
    if not tau > 0:
        raise ValueError("tau must be positive")
    z = encode(spec, w, np.vstack([np.asarray(anchor_view, float)[None, :], np.asarray(negatives, float)]))
    return float(np.mean(np.exp(z[1:] @ z[0] / tau)))


def batch_g(za: np.ndarray, zb: np.ndarray, tau: float) -> tuple:
    """Inner estimates for every anchor of a batch given both views' embeddings.

    The negatives of sample i are both views of every other batch sample.
    """
    B = za.shape[0]
    if B < 2:
        raise ValueError("a batch needs at least two samples to form negatives")
    off = 1.0 - np.eye(B)
    g_a = (np.exp(za @ za.T / tau) * off + np.exp(za @ zb.T / tau) * off).sum(axis=1) / (2 * (B - 1))
    g_b = (np.exp(zb @ zb.T / tau) * off + np.exp(zb @ za.T / tau) * off).sum(axis=1) / (2 * (B - 1))
    return g_a, g_b


def f2(g_val, cfg: GCLConfig):
    """tau * log(eps0' + g)."""
    arg = np.asarray(g_val, dtype=np.float64) + cfg.eps0_prime
    if np.any(arg <= 0):
        raise ValueError("f2 argument must be positive")
    out = cfg.tau * np.log(arg)
    return float(out) if out.ndim == 0 else out


def f1_pair(spec: EncoderSpec, w, x, aug_a: AugmentOp, aug_b: AugmentOp, rng=None) -> float:
    """Negative cosine between the representations of two augmented views."""
    xa = augment(x, aug_a, rng)
    xb = augment(x, aug_b, rng)
    z = encode(spec, w, np.stack([xa, xb]))
    return float(-(z[0] @ z[1]))


def _enumerated_views(spec, w, X, aug_set):
    if not aug_set:
        raise ValueError("augmentation set is empty")
    bad = [str(op) for op in aug_set if not op.deterministic]
    if bad:
        raise ValueError(f"exact enumeration needs deterministic augmentations, got {bad}")
    X = np.asarray(X, dtype=np.float64)
    n, P = X.shape[0], len(aug_set)
    if n < 2:
        raise ValueError("need at least two samples: the negative set S_i^- is empty")
    if n * P > ENUMERATION_LIMIT:
        raise ValueError(f"dataset too large to enumerate ({n} x {P} views)")
    return np.stack([encode(spec, w, augment(X, op)) for op in aug_set])  # (P, n, d)


def exact_g(spec: EncoderSpec, w, X, tau: float, aug_set: Sequence[AugmentOp] = (AugmentOp(),)) -> np.ndarray:
    """g(w; x_i, S_i^-) for every i with S_i^- = all views of all other samples."""
    Z = _enumerated_views(spec, w, X, aug_set)
    P, n, _ = Z.shape
    flat = Z.reshape(P * n, -1)
    sims = np.exp(np.einsum("pid,qd->piq", Z, flat) / tau).reshape(P, n, P, n)
    own = np.eye(n, dtype=bool)
    total = np.where(own[None, :, None, :], 0.0, sims).sum(axis=(2, 3))  # (P, n)
    return total.mean(axis=0) / (P * (n - 1))


def gcl_exact(spec: EncoderSpec, w, X, cfg: GCLConfig, aug_set: Sequence[AugmentOp] = (AugmentOp(),)) -> float:
    """Averaged global contrastive loss by full enumeration (constant dropped).

    ``eps0'`` is taken as ``eps0 / |S_i^-|`` with |S_i^-| = (n - 1) * len(aug_set),
    regardless of ``cfg.set_size``.
    """
    Z = _enumerated_views(spec, w, X, aug_set)
    P, n, _ = Z.shape
    f1 = -np.einsum("pid,qid->", Z, Z) / (P * P * n)
    g = exact_g(spec, w, X, cfg.tau, aug_set)
    eps = cfg.eps0 / ((n - 1) * P)
    return float(f1 + np.mean(cfg.tau * np.log(eps + g)))


def minibatch_cl(spec: EncoderSpec, w, X, tau: float, aug_pair=(AugmentOp(), AugmentOp()), rng=None) -> float:
    """Mini-batch contrastive loss averaged over anchors (first view).

    Each anchor's denominator holds its positive plus both views of every other
    sample: 2(|B| - 1) + 1 terms.
    """
    X = np.asarray(X, dtype=np.float64)
    B = X.shape[0]
    if B < 2:
        raise ValueError("batch must contain at least two samples")
    if not tau > 0:
        raise ValueError("tau must be positive")
    za = encode(spec, w, augment(X, aug_pair[0], rng))
    zb = encode(spec, w, augment(X, aug_pair[1], rng))
    s_aa = za @ za.T / tau
    s_ab = za @ zb.T / tau
    off = ~np.eye(B, dtype=bool)
    pos = np.diag(s_ab)
    logits = np.concatenate([s_aa[off].reshape(B, B - 1), s_ab], axis=1)  # negatives + all B' views
    top = logits.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
    return float(np.mean(lse - pos))
