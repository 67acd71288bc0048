"""A plain global-contrastive-loss trainer with no fairness machinery.

It consumes the same named random streams as :func:`sofclr.trainer.train`
but never touches the discriminator, the annotated subset or the fairness
stream. With ``alpha = 0`` the two loops must produce the same encoder
trajectory; the test suite uses this as an independent reference.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .data import Dataset, augment
from .gcl import LOG_GUARD, batch_g
from .models import EncoderSpec, build_encoder, encode, init_params
from .seeding import stream
from .tensorcore import Graph, Tape

__all__ = ["gcl_graph", "sogclr_reference"]


@lru_cache(maxsize=None)
def gcl_graph(enc: EncoderSpec, tau: float) -> Graph:
    g = Graph()
    E = build_encoder(g, enc)
    xa = g.input("xa", (None, enc.d_in))
    xb = g.input("xb", (None, enc.d_in))
    mask = g.input("negmask", (None, None))
    za, zb = E(xa), E(xb)
    g.output("f1", -g.dot(za, zb).mean())

    def sims(p, q):
        return (g.matmul(p, q, transpose_b=True) * (1.0 / tau)).exp() * mask

    g.output("g_a", (sims(za, za) + sims(za, zb)).sum(-1))
    g.output("g_b", (sims(zb, zb) + sims(zb, za)).sum(-1))
    return g


def sogclr_reference(cfg, dataset: Dataset) -> list:
    """Encoder parameters after each of ``cfg.iters`` iterations."""
    X, n, B = dataset.features, dataset.n, cfg.batch_main
    enc = cfg.encoder_spec(dataset.d_in)
    w = init_params(enc, stream(cfg.seed, "init"))

    rng_u = stream(cfg.seed, "u_init")
    u = np.empty(n)
    for chunk in np.array_split(rng_u.permutation(n), math.ceil(n / B)):
        za = encode(enc, w, augment(X[chunk], cfg.aug_a, rng_u))
        zb = encode(enc, w, augment(X[chunk], cfg.aug_b, rng_u))
        g_a, g_b = batch_g(za, zb, cfg.tau)
        u[chunk] = 0.5 * (g_a + g_b)

    rng_b, rng_aug = stream(cfg.seed, "batches"), stream(cfg.seed, "augment")
    perm, cursor = rng_b.permutation(n), 0
    mask = (1.0 - np.eye(B)) / (2 * (B - 1))
    eps = cfg.eps0 / (2 * (n - 1)) if n > 1 else cfg.eps0
    m_tilde = np.zeros_like(w)
    adam_m, adam_v = np.zeros_like(w), np.zeros_like(w)
    out = []
    for t in range(cfg.iters):
        if cursor + B > n:
            perm, cursor = rng_b.permutation(n), 0
        idx = perm[cursor : cursor + B]
        cursor += B
        xa = augment(X[idx], cfg.aug_a, rng_aug)
        xb = augment(X[idx], cfg.aug_b, rng_aug)
        tape = Tape(gcl_graph(enc, cfg.tau), w, {"xa": xa, "xb": xb, "negmask": mask})
        g_a, g_b = tape["g_a"], tape["g_b"]
        u_old = u[idx]
        u[idx] = (1.0 - cfg.gamma) * u_old + 0.5 * cfg.gamma * (g_a + g_b)
        u_used = u[idx] if cfg.post_update_u else u_old
        coef = cfg.tau / (2.0 * np.maximum(eps + u_used, LOG_GUARD)) / B
        m = tape.vjp({"f1": 1.0, "g_a": coef, "g_b": coef})
        m_tilde = m.copy() if t == 0 else (1.0 - cfg.beta) * m_tilde + cfg.beta * m
        if cfg.optimizer == "momentum":
            w = w - cfg.eta * m_tilde
        else:
            adam_m = cfg.adam_beta1 * adam_m + (1.0 - cfg.adam_beta1) * m
            adam_v = cfg.adam_beta2 * adam_v + (1.0 - cfg.adam_beta2) * m * m
            m_hat = adam_m / (1.0 - cfg.adam_beta1 ** (t + 1))
            v_hat = adam_v / (1.0 - cfg.adam_beta2 ** (t + 1))
            w = w - cfg.eta * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        out.append(w.copy())
    return out
