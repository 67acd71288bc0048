"""Datasets with partial attribute annotation, feature-space augmentations,
a synthetic biased benchmark, and CSV I/O.

Attribute and label values are stored next to boolean masks: ``attr_mask[i]``
is False for an unannotated sample and ``attrs[i]`` is then meaningless (it
is kept at 0 but must never be read). CSV files encode absence as an empty
cell.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeding import stream

__all__ = [
    "DataError",
    "Dataset",
    "SyntheticConfig",
    "AugmentOp",
    "gen_synthetic",
    "augment",
    "split_annotate",
    "load_csv",
    "save_csv",
    "parse_augment",
]


class DataError(ValueError):
    pass


@dataclass(eq=False)
class Dataset:
    features: np.ndarray
    attrs: np.ndarray
    attr_mask: np.ndarray
    labels: np.ndarray
    label_mask: np.ndarray
    K: int = 2

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {self.features.shape}")
        n = self.features.shape[0]
        self.attrs = np.asarray(self.attrs, dtype=np.int64).reshape(n)
        self.attr_mask = np.asarray(self.attr_mask, dtype=bool).reshape(n)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(n)
        self.label_mask = np.asarray(self.label_mask, dtype=bool).reshape(n)
        self.attrs = np.where(self.attr_mask, self.attrs, 0)
        self.labels = np.where(self.label_mask, self.labels, 0)
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite values")
        a = self.attrs[self.attr_mask]
        if a.size and (a.min() < 0 or a.max() >= self.K):
            raise DataError(f"attribute values must lie in [0, {self.K})")
        y = self.labels[self.label_mask]
        if y.size and not np.isin(y, (0, 1)).all():
            raise DataError("labels must be binary")
        for arr in (self.features, self.attrs, self.attr_mask, self.labels, self.label_mask):
            arr.setflags(write=False)

    @classmethod
    def from_arrays(cls, X, a=None, y=None, K=None) -> "Dataset":
        """Build from plain arrays; ``None`` entries (or a ``None`` array)
        mark missing attributes/labels."""
        X = np.asarray(X, dtype=np.float64)
        n = X.shape[0]

        def split(v):
            if v is None:
                return np.zeros(n, dtype=np.int64), np.zeros(n, dtype=bool)
            mask = np.array([e is not None for e in v], dtype=bool)
            vals = np.array([0 if e is None else int(e) for e in v], dtype=np.int64)
            return vals, mask

        av, am = split(a)
        yv, ym = split(y)
        if K is None:
            K = max(2, int(av[am].max()) + 1) if am.any() else 2
        return cls(X, av, am, yv, ym, K)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d_in(self) -> int:
        return self.features.shape[1]

    @property
    def annotated(self) -> np.ndarray:
        """Indices of D_a, the samples carrying a sensitive attribute."""
        return np.flatnonzero(self.attr_mask)

    def attr(self, i: int):
        return int(self.attrs[i]) if self.attr_mask[i] else None

    def label(self, i: int):
        return int(self.labels[i]) if self.label_mask[i] else None

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.attrs[idx], self.attr_mask[idx],
                       self.labels[idx], self.label_mask[idx], self.K)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.K == other.K
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.attr_mask, other.attr_mask)
            and np.array_equal(self.attrs, other.attrs)
            and np.array_equal(self.label_mask, other.label_mask)
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the synthetic biased benchmark.

    Features are laid out in three blocks: a class block whose mean depends on
    the label, a leaky block that encodes the group at strength
    ``bias_strength`` (pure noise at 0, noiseless group centroids at 1), and
    noise-only coordinates. The probability of a positive label is shifted by
    ``label_coupling * bias_strength / 2`` up or down depending on the group.
    """

    n: int = 4000
    d_in: int = 8
    K: int = 2
    bias_strength: float = 0.9
    group_props: tuple = (0.7, 0.3)
    noise_sigma: float = 0.5
    seed: int = 0
    label_coupling: float = 0.4
    class_sep: float = 0.5
    leak_scale: float = 1.5

    def __post_init__(self):
        object.__setattr__(self, "group_props", tuple(float(p) for p in self.group_props))
        if len(self.group_props) != self.K:
            raise ValueError("group_props must have K entries")
        if abs(sum(self.group_props) - 1.0) > 1e-9 or min(self.group_props) < 0:
            raise ValueError("group_props must lie on the simplex")
        if not 0.0 <= self.bias_strength <= 1.0:
            raise ValueError("bias_strength must be in [0, 1]")
        if not 0.0 <= self.label_coupling <= 1.0:
            raise ValueError("label_coupling must be in [0, 1]")
        if self.d_in < 3:
            raise ValueError("d_in must be at least 3 (class, leaky and noise blocks)")
        if self.n < 1 or self.noise_sigma < 0:
            raise ValueError("invalid n or noise_sigma")

    @property
    def blocks(self) -> tuple:
        """``(class_dims, leak_dims)``; the remaining coordinates are noise."""
        width = max(1, self.d_in // 4)
        return width, width


def _group_centroids(K: int, dims: int) -> np.ndarray:
    cent = np.zeros((K, dims))
    if dims == 1:
        cent[:, 0] = np.linspace(-1.0, 1.0, K)
    else:
        ang = 2.0 * np.pi * np.arange(K) / K
        cent[:, 0], cent[:, 1] = np.cos(ang), np.sin(ang)
    return cent


def gen_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Fully annotated, fully labeled synthetic dataset (deterministic in seed)."""
    rng = stream(cfg.seed, "synthetic")
    n, K = cfg.n, cfg.K
    a = rng.choice(K, size=n, p=cfg.group_props)
    # group preference in [-1, 1]; group 0 leans negative, group K-1 positive
    pref = np.linspace(-1.0, 1.0, K)[a]
    p_pos = 0.5 + 0.5 * cfg.label_coupling * cfg.bias_strength * pref
    y = (rng.random(n) < p_pos).astype(np.int64)

    c_dims, l_dims = cfg.blocks
    X = cfg.noise_sigma * rng.standard_normal((n, cfg.d_in))
    X[:, :c_dims] += ((2 * y - 1) * cfg.class_sep / math.sqrt(c_dims))[:, None]
    leak = cfg.bias_strength * _group_centroids(K, l_dims)[a]
    leak += (1.0 - cfg.bias_strength) * rng.standard_normal((n, l_dims))
    X[:, c_dims : c_dims + l_dims] = cfg.leak_scale * leak
    ones = np.ones(n, dtype=bool)
    return Dataset(X, a, ones, y, ones.copy(), K)


@dataclass(frozen=True)
class AugmentOp:
    """Feature-vector augmentation: identity, gaussian_noise(sigma),
    coordinate_mask(p) or random_scale(lo, hi)."""

    kind: str = "identity"
    params: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        k, p = self.kind, self.params
        ok = (
            (k == "identity" and not p)
            or (k == "gaussian_noise" and len(p) == 1 and p[0] >= 0)
            or (k == "coordinate_mask" and len(p) == 1 and 0 <= p[0] <= 1)
            or (k == "random_scale" and len(p) == 2 and 0 < p[0] <= p[1])
        )
        if not ok:
            raise ValueError(f"invalid augmentation {k}{p}")

    @property
    def deterministic(self) -> bool:
        k, p = self.kind, self.params
        return (
            k == "identity"
            or (k == "gaussian_noise" and p[0] == 0)
            or (k == "coordinate_mask" and p[0] in (0.0, 1.0))
            or (k == "random_scale" and p[0] == p[1])
        )

    def __str__(self):
        return self.kind if not self.params else f"{self.kind}:{','.join(repr(p) for p in self.params)}"


def parse_augment(text: str) -> AugmentOp:
    """``"gaussian_noise:0.1"`` -> ``AugmentOp("gaussian_noise", (0.1,))``."""
    kind, _, rest = text.strip().partition(":")
    params = tuple(float(t) for t in rest.split(",")) if rest else ()
    return AugmentOp(kind, params)


def augment(x, op: AugmentOp, rng: np.random.Generator | None = None) -> np.ndarray:
    """Apply ``op`` to a vector or row-wise to a batch. Deterministic ops never
    touch ``rng``; stochastic ops draw a fixed number of variates."""
    x = np.asarray(x, dtype=np.float64)
    k, p = op.kind, op.params
    if op.deterministic:
        if k == "coordinate_mask" and p[0] == 1.0:
            return np.zeros_like(x)
        if k == "random_scale":
            return x * p[0]
        return x.copy()
    if rng is None:
        raise ValueError(f"{k} needs a random generator")
    if k == "gaussian_noise":
        return x + p[0] * rng.standard_normal(x.shape)
    if k == "coordinate_mask":
        return np.where(rng.random(x.shape) < p[0], 0.0, x)
    scale = rng.uniform(p[0], p[1], size=x.shape[:-1] + (1,))
    return x * scale


def split_annotate(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Keep attributes on exactly floor(fraction * n) randomly chosen samples."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    n_keep = math.floor(fraction * dataset.n)
    candidates = dataset.annotated
    if n_keep == 0 or candidates.size < n_keep:
        raise DataError(f"fraction {fraction} leaves {min(n_keep, candidates.size)} annotated samples "
                        f"(need {n_keep}, have {candidates.size} annotated)")
    chosen = np.sort(stream(seed, "annotate").choice(candidates, size=n_keep, replace=False))
    mask = np.zeros(dataset.n, dtype=bool)
    mask[chosen] = True
    return Dataset(dataset.features, dataset.attrs, mask, dataset.labels, dataset.label_mask, dataset.K)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_csv(dataset: Dataset, path) -> None:
    header = ["id", *(f"x{j}" for j in range(dataset.d_in)), "a", "y"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.n):
            a, y = dataset.attr(i), dataset.label(i)
            w.writerow([i, *(_fmt(v) for v in dataset.features[i]),
                        "" if a is None else a, "" if y is None else y])


def load_csv(path, K: int | None = None) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: line 1: empty file")
    header = rows[0]
    d_in = len(header) - 3
    expected = ["id", *(f"x{j}" for j in range(d_in)), "a", "y"]
    if d_in < 1 or header != expected:
        raise DataError(f"{path}: line 1: header must be id,x0..x{{d-1}},a,y; got {','.join(header)}")
    X = np.empty((len(rows) - 1, d_in))
    a, y = [], []
    for ln, row in enumerate(rows[1:], start=2):
        if len(row) != d_in + 3:
            raise DataError(f"{path}: line {ln}: expected {d_in + 3} fields, got {len(row)}")
        try:
            X[ln - 2] = [float(v) for v in row[1 : d_in + 1]]
            a.append(int(row[-2]) if row[-2] != "" else None)
            y.append(int(row[-1]) if row[-1] != "" else None)
        except ValueError as exc:
            raise DataError(f"{path}: line {ln}: {exc}") from None
    try:
        return Dataset.from_arrays(X, a, y, K)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None
