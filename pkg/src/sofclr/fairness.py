"""Adversarial fairness regularizer and the discriminator's ascent direction."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .data import AugmentOp, augment
from .models import DiscriminatorSpec, EncoderSpec, build_discriminator, build_encoder, onehot
from .tensorcore import Graph, ShapeError, Tape

__all__ = ["FairBatch", "fair_graph", "fair_loss", "dual_grad", "fair_value_and_grad", "warm_start"]


@dataclass(frozen=True, eq=False)
class FairBatch:
    """Annotated samples plus the two augmentations that produce their views."""

    x: np.ndarray
    a: np.ndarray
    aug_pair: tuple = (AugmentOp(), AugmentOp())

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        a = np.atleast_1d(np.asarray(self.a, dtype=np.int64))
        if x.shape[0] == 0:
            raise ValueError("fair batch is empty")
        if a.shape != (x.shape[0],):
            raise ShapeError("one attribute per sample required")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a)

    def views(self, rng=None) -> tuple:
        return augment(self.x, self.aug_pair[0], rng), augment(self.x, self.aug_pair[1], rng)


@lru_cache(maxsize=None)
def fair_graph(enc: EncoderSpec, disc: DiscriminatorSpec) -> Graph:
    if enc.d != disc.d:
        raise ShapeError(f"encoder output d={enc.d} but discriminator expects d={disc.d}")
    g = Graph()
    E = build_encoder(g, enc)
    D = build_discriminator(g, disc)
    xa = g.input("xa", (None, enc.d_in))
    xb = g.input("xb", (None, enc.d_in))
    oh = g.input("onehot", (None, disc.K))
    g.output("fair", (g.dot(D(E(xa)), oh).mean() + g.dot(D(E(xb)), oh).mean()) * 0.5)
    return g


def _tape(enc, disc, w, w_prime, batch: FairBatch, rng) -> Tape:
    xa, xb = batch.views(rng)
    params = np.concatenate([np.asarray(w, float), np.asarray(w_prime, float)])
    return Tape(fair_graph(enc, disc), params, {"xa": xa, "xb": xb, "onehot": onehot(batch.a, disc.K)})


def fair_loss(enc, disc, w, w_prime, batch: FairBatch, rng=None) -> float:
    """Mean log-likelihood of the true attribute over both views of the batch."""
    return float(_tape(enc, disc, w, w_prime, batch, rng)["fair"])


def fair_value_and_grad(enc, disc, w, w_prime, batch: FairBatch, rng=None) -> tuple:
    """``(value, grad_w, grad_w_prime)`` of :func:`fair_loss`."""
    tape = _tape(enc, disc, w, w_prime, batch, rng)
    grad = tape.grad("fair")
    return float(tape["fair"]), grad[: enc.n_params], grad[enc.n_params :]


def dual_grad(enc, disc, w, w_prime, batch: FairBatch, rng=None) -> np.ndarray:
    """Ascent direction for the discriminator: gradient of :func:`fair_loss` in w'."""
    return fair_value_and_grad(enc, disc, w, w_prime, batch, rng)[2]


def warm_start(enc, disc, w, w_prime, batch: FairBatch, eta_prime: float, steps: int, rng=None) -> np.ndarray:
    """Run ``steps`` full-batch ascent steps on w' with the encoder frozen."""
    w_prime = np.array(w_prime, dtype=np.float64)
    for _ in range(steps):
        w_prime = w_prime + eta_prime * dual_grad(enc, disc, w, w_prime, batch, rng)
    return w_prime
