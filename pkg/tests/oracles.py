"""Independent reference computations written with plain numpy loops.

Nothing here imports the graph engine; parameter layouts are unpacked by hand
(per layer: weight matrix of shape (fan_in, fan_out), then bias).
"""

import math

import numpy as np


def unpack(flat, dims):
    layers, off = [], 0
    for i, o in dims:
        W = np.asarray(flat[off : off + i * o]).reshape(i, o)
        off += i * o
        b = np.asarray(flat[off : off + o])
        off += o
        layers.append((W, b))
    assert off == len(flat)
    return layers


def mlp(flat, dims, x):
    h = list(map(float, x))
    layers = unpack(flat, dims)
    for k, (W, b) in enumerate(layers):
        h = [sum(h[i] * W[i, j] for i in range(len(h))) + b[j] for j in range(W.shape[1])]
        if k < len(layers) - 1:
            h = [max(v, 0.0) for v in h]
    return h


def encode(flat, dims, x):
    h = mlp(flat, dims, x)
    norm = math.sqrt(sum(v * v for v in h))
    return [v / norm for v in h]


def softmax(logits):
    m = max(logits)
    e = [math.exp(v - m) for v in logits]
    s = sum(e)
    return [v / s for v in e]


def phi(enc_flat, enc_dims, disc_flat, disc_dims, x, a):
    z = encode(enc_flat, enc_dims, x)
    return math.log(softmax(mlp(disc_flat, disc_dims, z))[a])


def cos(u, v):
    return sum(p * q for p, q in zip(u, v))


def gcl_by_anchor(zs, tau, eps0=0.0):
    """Averaged global contrastive loss, one anchor at a time (identity views).

    zs: list of unit vectors, one per sample. Constant term dropped.
    """
    n = len(zs)
    total = 0.0
    for i in range(n):
        f1 = -cos(zs[i], zs[i])
        g = sum(math.exp(cos(zs[i], zs[j]) / tau) for j in range(n) if j != i) / (n - 1)
        total += f1 + tau * math.log(eps0 / (n - 1) + g)
    return total / n


def minibatch_cl(za, zb, tau):
    """Per-anchor -log(pos / denominator), averaged; denominator = positive + both views of others."""
    B = len(za)
    out = 0.0
    for i in range(B):
        pos = math.exp(cos(za[i], zb[i]) / tau)
        den = pos
        for j in range(B):
            if j != i:
                den += math.exp(cos(za[i], za[j]) / tau) + math.exp(cos(za[i], zb[j]) / tau)
        out += -math.log(pos / den)
    return out / B


def auc_pairs(pos, neg):
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))
