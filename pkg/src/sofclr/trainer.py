"""The SoFCLR training loop.

Each iteration samples a main batch ``B`` from the whole dataset and an
annotated batch ``B_a`` from the samples carrying a sensitive attribute, then

1. computes the inner estimates for both views of every anchor in ``B`` and
   folds them into the per-sample moving averages ``u``;
2. assembles the encoder gradient estimate ``m`` (contrastive part weighted by
   ``tau / (2 (eps0' + u_i))`` plus ``alpha`` times the fairness part) and the
   discriminator ascent direction ``v``;
3. updates the momentum buffer, descends on the encoder (momentum or Adam) and
   ascends on the discriminator.

The denominator uses the freshly updated ``u_i`` (the order of operations in
the algorithm listing). Set ``post_update_u=False`` to use the value from
before the update instead.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .data import AugmentOp, Dataset, augment
from .fairness import FairBatch, warm_start
from .gcl import LOG_GUARD, UEstimator, batch_g
from .models import (
    DiscriminatorSpec,
    EncoderSpec,
    build_discriminator,
    build_encoder,
    encode,
    init_params,
    onehot,
    phi_graph,
)
from .seeding import from_state, get_state, stream
from .tensorcore import Graph, Tape, forward

__all__ = [
    "TrainConfig",
    "TrainState",
    "BatchViews",
    "GradientEstimate",
    "History",
    "HistoryRecord",
    "InsufficientDataError",
    "objective_graph",
    "init_state",
    "sample_views",
    "primal_grad",
    "step",
    "train",
    "Schedule",
    "schedule",
]


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    beta: float = 0.1
    gamma: float = 0.9
    eta: float = 1e-3
    eta_prime: float = 0.5
    batch_main: int = 64
    batch_attr: int = 64
    iters: int = 1000
    optimizer: str = "adam"
    lambda_hint: float = 1.0
    seed: int = 0
    tau: float = 0.5
    eps0: float = 0.0
    hidden: tuple = (64, 32)
    d: int = 16
    disc_hidden: tuple = (32,)
    aug_a: AugmentOp = AugmentOp("gaussian_noise", (0.1,))
    aug_b: AugmentOp = AugmentOp("coordinate_mask", (0.1,))
    warm_start: int = 20
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    post_update_u: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "disc_hidden", tuple(int(h) for h in self.disc_hidden))
        problems = []
        if self.alpha < 0:
            problems.append("alpha must be >= 0")
        if not 0 < self.beta <= 1:
            problems.append("beta must be in (0, 1]")
        if not 0 < self.gamma <= 1:
            problems.append("gamma must be in (0, 1]")
        if self.eta < 0 or self.eta_prime < 0:
            problems.append("step sizes must be >= 0")
        if self.batch_main < 2 or self.batch_attr < 1:
            problems.append("batch_main must be >= 2 and batch_attr >= 1")
        if self.iters < 0 or self.warm_start < 0:
            problems.append("iters and warm_start must be >= 0")
        if self.optimizer not in ("momentum", "adam"):
            problems.append("optimizer must be 'momentum' or 'adam'")
        if not self.lambda_hint > 0 or not self.tau > 0 or self.eps0 < 0:
            problems.append("lambda_hint and tau must be > 0, eps0 >= 0")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def aug_pair(self) -> tuple:
        return (self.aug_a, self.aug_b)

    def encoder_spec(self, d_in: int) -> EncoderSpec:
        return EncoderSpec(d_in, self.hidden, self.d)

    def disc_spec(self, K: int) -> DiscriminatorSpec:
        return DiscriminatorSpec(self.d, self.disc_hidden, K)


@dataclass
class TrainState:
    w: np.ndarray
    w_prime: np.ndarray
    u: UEstimator
    m_tilde: np.ndarray
    t: int
    rng: dict
    perm: np.ndarray
    cursor: int
    adam_m: Optional[np.ndarray] = None
    adam_v: Optional[np.ndarray] = None

    def copy(self) -> "TrainState":
        return TrainState(
            self.w.copy(),
            self.w_prime.copy(),
            self.u,
            self.m_tilde.copy(),
            self.t,
            {k: from_state(get_state(g)) for k, g in self.rng.items()},
            self.perm.copy(),
            self.cursor,
            None if self.adam_m is None else self.adam_m.copy(),
            None if self.adam_v is None else self.adam_v.copy(),
        )


@dataclass
class BatchViews:
    """Materialised views of one iteration's batches."""

    idx: np.ndarray
    xa: np.ndarray
    xb: np.ndarray
    fa: np.ndarray
    fb: np.ndarray
    onehot: np.ndarray


@dataclass
class GradientEstimate:
    m: np.ndarray
    v: np.ndarray
    g_a: np.ndarray
    g_b: np.ndarray
    u: UEstimator
    f1: float
    fair: float


@dataclass(frozen=True)
class HistoryRecord:
    t: int
    gcl: float
    fair: float
    grad_norm: float
    dual_ll: float
    ms: float


@dataclass
class History:
    records: list = field(default_factory=list)

    COLUMNS = ("t", "gcl", "fair", "grad_norm", "dual_ll", "ms")

    def append(self, rec: HistoryRecord):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.records:
                w.writerow([r.t, *(format(getattr(r, c), ".17g") for c in self.COLUMNS[1:])])


@lru_cache(maxsize=None)
def objective_graph(enc: EncoderSpec, disc: DiscriminatorSpec, tau: float) -> Graph:
    """Graph of the per-iteration quantities.

    Outputs ``f1`` (batch mean), ``g_a``/``g_b`` (inner estimates per anchor)
    and ``fair`` (two-view mean log-likelihood on the annotated batch). The
    ``negmask`` input is the off-diagonal mask already divided by 2(|B| - 1).
    """
    g = Graph()
    E = build_encoder(g, enc)
    D = build_discriminator(g, disc)
    xa = g.input("xa", (None, enc.d_in))
    xb = g.input("xb", (None, enc.d_in))
    mask = g.input("negmask", (None, None))
    za, zb = E(xa), E(xb)
    g.output("f1", -g.dot(za, zb).mean())

    def sims(p, q):
        return (g.matmul(p, q, transpose_b=True) * (1.0 / tau)).exp() * mask

    g.output("g_a", (sims(za, za) + sims(za, zb)).sum(-1))
    g.output("g_b", (sims(zb, zb) + sims(zb, za)).sum(-1))
    fa = g.input("fa", (None, enc.d_in))
    fb = g.input("fb", (None, enc.d_in))
    oh = g.input("onehot", (None, disc.K))
    g.output("fair", (g.dot(D(E(fa)), oh).mean() + g.dot(D(E(fb)), oh).mean()) * 0.5)
    return g


def negmask(B: int) -> np.ndarray:
    return (1.0 - np.eye(B)) / (2 * (B - 1))


def _check_dataset(cfg: TrainConfig, dataset: Dataset):
    if dataset.n < cfg.batch_main:
        raise InsufficientDataError(f"dataset has {dataset.n} samples, batch_main={cfg.batch_main}")
    n_a = dataset.annotated.size
    if n_a < max(cfg.batch_attr, 1):
        raise InsufficientDataError(f"dataset has {n_a} annotated samples, batch_attr={cfg.batch_attr}")


def initial_u(enc: EncoderSpec, w, X: np.ndarray, cfg: TrainConfig, rng) -> np.ndarray:
    """One pass over the data in random batches; u_i = mean of both views' estimates."""
    n = X.shape[0]
    u = np.empty(n)
    perm = rng.permutation(n)
    for chunk in np.array_split(perm, math.ceil(n / cfg.batch_main)):
        xa = augment(X[chunk], cfg.aug_a, rng)
        xb = augment(X[chunk], cfg.aug_b, rng)
        g_a, g_b = batch_g(encode(enc, w, xa), encode(enc, w, xb), cfg.tau)
        u[chunk] = 0.5 * (g_a + g_b)
    return u


def init_state(cfg: TrainConfig, dataset: Dataset) -> TrainState:
    """Initial weights, u from a first pass, and a warm-started discriminator."""
    _check_dataset(cfg, dataset)
    enc, disc = cfg.encoder_spec(dataset.d_in), cfg.disc_spec(dataset.K)
    rng_init = stream(cfg.seed, "init")
    w = init_params(enc, rng_init)
    w_prime = init_params(disc, rng_init)
    u = initial_u(enc, w, dataset.features, cfg, stream(cfg.seed, "u_init"))
    rng_fair = stream(cfg.seed, "fair")
    ann = dataset.annotated
    if cfg.warm_start:
        batch = FairBatch(dataset.features[ann], dataset.attrs[ann], cfg.aug_pair)
        w_prime = warm_start(enc, disc, w, w_prime, batch, cfg.eta_prime, cfg.warm_start, rng_fair)
    rng_batches = stream(cfg.seed, "batches")
    adam = cfg.optimizer == "adam"
    return TrainState(
        w=w,
        w_prime=w_prime,
        u=UEstimator(u, cfg.gamma),
        m_tilde=np.zeros_like(w),
        t=0,
        rng={"batches": rng_batches, "augment": stream(cfg.seed, "augment"), "fair": rng_fair},
        perm=rng_batches.permutation(dataset.n),
        cursor=0,
        adam_m=np.zeros_like(w) if adam else None,
        adam_v=np.zeros_like(w) if adam else None,
    )


def next_batch(state: TrainState, B: int) -> np.ndarray:
    """Without replacement within an epoch; an epoch's short tail is dropped."""
    if state.cursor + B > state.perm.size:
        state.perm = state.rng["batches"].permutation(state.perm.size)
        state.cursor = 0
    idx = state.perm[state.cursor : state.cursor + B]
    state.cursor += B
    return idx


def sample_views(state: TrainState, cfg: TrainConfig, dataset: Dataset) -> BatchViews:
    """Draw B, B_a and both augmented views of each; advances ``state``'s generators."""
    idx = next_batch(state, cfg.batch_main)
    attr_idx = state.rng["fair"].choice(dataset.annotated, size=cfg.batch_attr, replace=True)
    X = dataset.features
    xa = augment(X[idx], cfg.aug_a, state.rng["augment"])
    xb = augment(X[idx], cfg.aug_b, state.rng["augment"])
    fa = augment(X[attr_idx], cfg.aug_a, state.rng["fair"])
    fb = augment(X[attr_idx], cfg.aug_b, state.rng["fair"])
    return BatchViews(idx, xa, xb, fa, fb, onehot(dataset.attrs[attr_idx], dataset.K))


def primal_grad(state: TrainState, cfg: TrainConfig, views: BatchViews) -> GradientEstimate:
    """Encoder gradient estimate ``m``, discriminator direction ``v`` and the
    refreshed inner estimates for the sampled anchors."""
    if views.idx.size < 2 or views.onehot.shape[0] == 0:
        raise ValueError("empty or single-sample batch")
    enc = cfg.encoder_spec(views.xa.shape[1])
    disc = cfg.disc_spec(views.onehot.shape[1])
    graph = objective_graph(enc, disc, cfg.tau)
    params = np.concatenate([state.w, state.w_prime])
    tape = Tape(graph, params, {
        "xa": views.xa, "xb": views.xb, "negmask": negmask(views.idx.size),
        "fa": views.fa, "fb": views.fb, "onehot": views.onehot,
    })
    g_a, g_b = tape["g_a"], tape["g_b"]
    u_new = state.u.update(views.idx, g_a, g_b)
    u_used = (u_new if cfg.post_update_u else state.u).values[views.idx]
    eps = cfg.eps0 / (2 * (state.u.values.size - 1)) if state.u.values.size > 1 else cfg.eps0
    coef = cfg.tau / (2.0 * np.maximum(eps + u_used, LOG_GUARD)) / views.idx.size
    nw = state.w.size
    m = tape.vjp({"f1": 1.0, "g_a": coef, "g_b": coef})[:nw]
    fair_grad = tape.grad("fair")
    m = m + cfg.alpha * fair_grad[:nw]
    return GradientEstimate(m, fair_grad[nw:], g_a, g_b, u_new, float(tape["f1"]), float(tape["fair"]))


def _dual_ll(cfg: TrainConfig, dataset: Dataset, w, w_prime) -> float:
    ann = dataset.annotated
    g = phi_graph(cfg.encoder_spec(dataset.d_in), cfg.disc_spec(dataset.K))
    out = forward(g, np.concatenate([w, w_prime]),
                  {"x": dataset.features[ann], "onehot": onehot(dataset.attrs[ann], dataset.K)})
    return float(out["phi_mean"])


def _advance(state: TrainState, cfg: TrainConfig, dataset: Dataset) -> tuple:
    t0 = time.perf_counter()
    s = state.copy()
    views = sample_views(s, cfg, dataset)
    est = primal_grad(s, cfg, views)
    s.u = est.u
    s.m_tilde = est.m.copy() if s.t == 0 else (1.0 - cfg.beta) * s.m_tilde + cfg.beta * est.m
    if cfg.optimizer == "momentum":
        s.w = s.w - cfg.eta * s.m_tilde
    else:
        k = s.t + 1
        s.adam_m = cfg.adam_beta1 * s.adam_m + (1.0 - cfg.adam_beta1) * est.m
        s.adam_v = cfg.adam_beta2 * s.adam_v + (1.0 - cfg.adam_beta2) * est.m * est.m
        m_hat = s.adam_m / (1.0 - cfg.adam_beta1**k)
        v_hat = s.adam_v / (1.0 - cfg.adam_beta2**k)
        s.w = s.w - cfg.eta * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    s.w_prime = s.w_prime + cfg.eta_prime * est.v
    s.t += 1
    u_b = s.u.values[views.idx]
    gcl_est = est.f1 + float(np.mean(cfg.tau * np.log(np.maximum(u_b, LOG_GUARD))))
    rec = HistoryRecord(
        t=s.t,
        gcl=gcl_est,
        fair=est.fair,
        grad_norm=float(np.linalg.norm(s.m_tilde)),
        dual_ll=_dual_ll(cfg, dataset, s.w, s.w_prime),
        ms=(time.perf_counter() - t0) * 1e3,
    )
    return s, rec


def step(state: TrainState, cfg: TrainConfig, dataset: Dataset) -> TrainState:
    """One iteration; ``state`` is left untouched."""
    return _advance(state, cfg, dataset)[0]


def train(
    cfg: TrainConfig,
    dataset: Dataset,
    resume: TrainState | None = None,
    callback: Callable | None = None,
) -> tuple:
    """Run until ``cfg.iters`` iterations; returns ``(state, History)``.

    With ``resume`` the loop continues from that state, and the result is
    bitwise identical to an uninterrupted run.
    """
    _check_dataset(cfg, dataset)
    state = resume.copy() if resume is not None else init_state(cfg, dataset)
    hist = History()
    while state.t < cfg.iters:
        state, rec = _advance(state, cfg, dataset)
        hist.append(rec)
        if callback is not None:
            callback(state, rec)
    return state, hist


@dataclass(frozen=True)
class Schedule:
    eta: float
    beta: float
    gamma: float
    eta_prime: float
    T: int
    raw: dict


def schedule(eps: float, n: int, batch_main: int, batch_attr: int, lambda_hint: float) -> Schedule:
    """Step sizes and iteration count from the convergence-rate orders, with
    every hidden constant set to one.

    ``raw`` holds the unclamped values; the returned rates are clamped to
    beta <= 1, gamma <= 1/2, eta' <= 1. This is a heuristic configurator, not
    a guarantee.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not lambda_hint > 0:
        raise ValueError("lambda_hint must be positive")
    if min(n, batch_main, batch_attr) < 1:
        raise ValueError("sizes must be positive")
    e2 = eps * eps
    bmin = min(batch_main, batch_attr)
    raw_beta = bmin * e2
    raw_gamma = batch_main * e2
    raw_eta_prime = lambda_hint * batch_attr * e2
    raw_T = max(1.0 / bmin, n / batch_main**2, 1.0 / (lambda_hint**3 * batch_attr)) / (e2 * e2)
    beta = min(1.0, raw_beta)
    gamma = min(0.5, raw_gamma)
    eta_prime = min(1.0, raw_eta_prime)
    raw_eta = min(raw_beta, batch_main * raw_gamma / n, raw_eta_prime)
    eta = min(beta, batch_main * gamma / n, eta_prime)
    raw = {"eta": raw_eta, "beta": raw_beta, "gamma": raw_gamma, "eta_prime": raw_eta_prime, "T": raw_T}
    return Schedule(eta, beta, gamma, eta_prime, max(1, math.ceil(raw_T)), raw)
