"""Encoder and discriminator networks on top of :mod:`sofclr.tensorcore`.

The encoder is a ReLU MLP whose output is L2-normalized. The discriminator is
a ReLU MLP (or a linear head when ``hidden`` is empty) followed by a softmax
over the ``K`` attribute values. Parameters live in flat vectors; the layout
is the order in which the builder creates the slots (``W0, b0, W1, b1, ...``).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tensorcore import Graph, ShapeError, Var, forward, value_and_grad

__all__ = [
    "EncoderSpec",
    "DiscriminatorSpec",
    "build_encoder",
    "build_discriminator",
    "init_params",
    "encode",
    "discriminate",
    "phi",
    "phi_grad",
]


@dataclass(frozen=True)
class EncoderSpec:
    d_in: int
    hidden: tuple = (64, 32)
    d: int = 16

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.d < 1 or self.d_in < 1 or any(h < 1 for h in self.hidden):
            raise ValueError(f"invalid encoder dimensions: {self}")

    @property
    def layer_dims(self) -> list:
        dims = [self.d_in, *self.hidden, self.d]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims)


@dataclass(frozen=True)
class DiscriminatorSpec:
    d: int
    hidden: tuple = (32,)
    K: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.K < 2 or self.d < 1 or any(h < 1 for h in self.hidden):
            raise ValueError(f"invalid discriminator dimensions: {self}")

    @property
    def layer_dims(self) -> list:
        dims = [self.d, *self.hidden, self.K]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims)


def _mlp(g: Graph, dims, prefix):
    layers = [(g.param(f"{prefix}/W{k}", (i, o)), g.param(f"{prefix}/b{k}", (o,))) for k, (i, o) in enumerate(dims)]

    def apply(x: Var) -> Var:
        h = x
        for k, (W, b) in enumerate(layers):
            h = h @ W + b
            if k < len(layers) - 1:
                h = h.relu()
        return h

    return apply


def build_encoder(g: Graph, spec: EncoderSpec, prefix: str = "enc"):
    """Create encoder slots in ``g``; return ``x -> unit-norm representation``."""
    mlp = _mlp(g, spec.layer_dims, prefix)
    return lambda x: g.l2_normalize(mlp(x))


def build_discriminator(g: Graph, spec: DiscriminatorSpec, prefix: str = "disc"):
    """Create discriminator slots in ``g``; return ``v -> log-probabilities``."""
    mlp = _mlp(g, spec.layer_dims, prefix)
    return lambda v: g.log_softmax(mlp(v))


def init_params(spec, rng: np.random.Generator) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    chunks = []
    for fan_in, fan_out in spec.layer_dims:
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_out))
    return np.concatenate(chunks)


@lru_cache(maxsize=None)
def encoder_graph(spec: EncoderSpec) -> Graph:
    g = Graph()
    enc = build_encoder(g, spec)
    g.output("z", enc(g.input("x", (None, spec.d_in))))
    return g


@lru_cache(maxsize=None)
def discriminator_graph(spec: DiscriminatorSpec) -> Graph:
    g = Graph()
    disc = build_discriminator(g, spec)
    g.output("logp", disc(g.input("v", (None, spec.d))))
    return g


@lru_cache(maxsize=None)
def phi_graph(enc_spec: EncoderSpec, disc_spec: DiscriminatorSpec) -> Graph:
    if enc_spec.d != disc_spec.d:
        raise ShapeError(f"encoder output d={enc_spec.d} but discriminator expects d={disc_spec.d}")
    g = Graph()
    enc = build_encoder(g, enc_spec)
    disc = build_discriminator(g, disc_spec)
    x = g.input("x", (None, enc_spec.d_in))
    onehot = g.input("onehot", (None, disc_spec.K))
    per_sample = g.output("phi", g.dot(disc(enc(x)), onehot))
    g.output("phi_mean", per_sample.mean())
    return g


def _as_batch(x, dim: int, what: str):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != dim:
        raise ShapeError(f"{what}: expected length {dim}, got shape {x.shape}")
    return xb, single


def _check_params(w, n, what):
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (n,):
        raise ShapeError(f"{what}: expected {n} parameters, got shape {w.shape}")
    return w


def encode(spec: EncoderSpec, w, x) -> np.ndarray:
    """Unit-norm representation of ``x`` (a vector or a batch of rows)."""
    xb, single = _as_batch(x, spec.d_in, "encode")
    z = forward(encoder_graph(spec), _check_params(w, spec.n_params, "encoder"), {"x": xb})["z"]
    return z[0] if single else z


def discriminate(spec: DiscriminatorSpec, w_prime, v) -> np.ndarray:
    vb, single = _as_batch(v, spec.d, "discriminate")
    logp = forward(discriminator_graph(spec), _check_params(w_prime, spec.n_params, "discriminator"), {"v": vb})["logp"]
    p = np.exp(logp)
    return p[0] if single else p


def onehot(a, K: int) -> np.ndarray:
    a = np.atleast_1d(np.asarray(a))
    if a.dtype.kind not in "iu" or np.any(a < 0) or np.any(a >= K):
        raise ValueError(f"attribute index out of range [0, {K}): {a}")
    out = np.zeros((a.size, K))
    out[np.arange(a.size), a] = 1.0
    return out


def _phi_inputs(enc_spec, disc_spec, x_aug, a):
    xb, _ = _as_batch(x_aug, enc_spec.d_in, "phi")
    oh = onehot(a, disc_spec.K)
    if oh.shape[0] != xb.shape[0]:
        raise ShapeError("phi: one attribute per input row required")
    return {"x": xb, "onehot": oh}


def phi(enc_spec: EncoderSpec, disc_spec: DiscriminatorSpec, w, w_prime, x_aug, a) -> float:
    """Discriminator log-likelihood of attribute ``a`` for the (augmented) input.

    For a batch of rows the mean over rows is returned.
    """
    g = phi_graph(enc_spec, disc_spec)
    params = np.concatenate([_check_params(w, enc_spec.n_params, "encoder"),
                             _check_params(w_prime, disc_spec.n_params, "discriminator")])
    return float(forward(g, params, _phi_inputs(enc_spec, disc_spec, x_aug, a))["phi_mean"])


def phi_grad(enc_spec, disc_spec, w, w_prime, x_aug, a) -> tuple:
    """``(phi, grad_w, grad_w_prime)`` for the same quantity as :func:`phi`."""
    g = phi_graph(enc_spec, disc_spec)
    params = np.concatenate([_check_params(w, enc_spec.n_params, "encoder"),
                             _check_params(w_prime, disc_spec.n_params, "discriminator")])
    outs, grads = value_and_grad(g, params, _phi_inputs(enc_spec, disc_spec, x_aug, a), ["phi_mean"])
    grad = grads["phi_mean"]
    n = enc_spec.n_params
    return float(outs["phi_mean"]), grad[:n], grad[n:]
