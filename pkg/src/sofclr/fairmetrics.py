"""Accuracy and group-fairness metrics of a scored binary classifier.

All gap metrics are returned on a [0, 1] scale. With more than two groups the
default aggregation is the worst case over all pairs of non-empty groups;
``aggregation="mean_adjacent"`` instead averages the consecutive pairs
(g0, g1), (g1, g2), ... and, for the AUC metrics, averages one-vs-rest splits.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "UndefinedMetricError",
    "ScoredExample",
    "ScoredSet",
    "MetricsReport",
    "as_scored",
    "accuracy",
    "group_gap_metrics",
    "auc",
    "auc_rank",
    "auc_fairness",
    "dist_metrics",
    "evaluate_scored",
    "read_scored_csv",
    "write_scored_csv",
    "SMOOTHING",
    "THRESHOLD",
]

SMOOTHING = 1e-6
THRESHOLD = 0.5
AGGREGATIONS = ("max", "mean_adjacent")


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredExample:
    score: float
    pred: int
    label: int
    group: int


@dataclass(frozen=True, eq=False)
class ScoredSet:
    """Column view of a list of :class:`ScoredExample`."""

    score: np.ndarray
    pred: np.ndarray
    label: np.ndarray
    group: np.ndarray

    @classmethod
    def from_scores(cls, score, label, group, threshold: float = THRESHOLD) -> "ScoredSet":
        score = np.asarray(score, dtype=np.float64)
        return cls(score, (score >= threshold).astype(np.int64), np.asarray(label), np.asarray(group))

    def __len__(self):
        return self.score.size

    @property
    def groups(self) -> list:
        return sorted(int(g) for g in np.unique(self.group))

    def examples(self) -> list:
        return [ScoredExample(float(s), int(p), int(y), int(g))
                for s, p, y, g in zip(self.score, self.pred, self.label, self.group)]


def as_scored(examples) -> ScoredSet:
    if isinstance(examples, ScoredSet):
        return examples
    examples = list(examples)
    if not examples:
        return ScoredSet(np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64))
    cols = zip(*((e.score, e.pred, e.label, e.group) for e in examples))
    s, p, y, g = (np.asarray(c) for c in cols)
    if np.any(g < 0):
        raise ValueError("group indices must be non-negative")
    return ScoredSet(s.astype(np.float64), p.astype(np.int64), y.astype(np.int64), g.astype(np.int64))


def _pairs(groups: list, aggregation: str):
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
    if aggregation == "max":
        return list(itertools.combinations(groups, 2))
    return list(zip(groups[:-1], groups[1:]))


def _aggregate(values: list, aggregation: str) -> float:
    if not values:
        return 0.0
    return float(max(values)) if aggregation == "max" else float(np.mean(values))


def accuracy(examples) -> float:
    s = as_scored(examples)
    if len(s) == 0:
        raise ValueError("no examples")
    return float(np.mean(s.pred == s.label))


def _rate(mask_num, mask_den, stratum: str) -> float:
    den = int(mask_den.sum())
    if den == 0:
        raise UndefinedMetricError(f"empty stratum: {stratum}")
    return int((mask_num & mask_den).sum()) / den


def group_gap_metrics(examples, aggregation: str = "max") -> tuple:
    """(demographic parity gap, equal opportunity gap, equalized odds gap).

    The equalized odds gap of a pair is the mean of its TPR gap and FPR gap.
    """
    s = as_scored(examples)
    groups = s.groups
    pos_pred = s.pred == 1
    stats = {}
    for g in groups:
        in_g = s.group == g
        stats[g] = (
            _rate(pos_pred, in_g, f"group {g}"),
            _rate(pos_pred, in_g & (s.label == 1), f"group {g}, label 1"),
            _rate(pos_pred, in_g & (s.label == 0), f"group {g}, label 0"),
        )
    dp, eo, ed = [], [], []
    for g, h in _pairs(groups, aggregation):
        (pg, tg, fg), (ph, th, fh) = stats[g], stats[h]
        dp.append(abs(pg - ph))
        eo.append(abs(tg - th))
        ed.append(0.5 * (abs(tg - th) + abs(fg - fh)))
    return _aggregate(dp, aggregation), _aggregate(eo, aggregation), _aggregate(ed, aggregation)


def auc(pos_scores, neg_scores) -> float:
    """Fraction of (positive, negative) pairs ranked correctly; ties count 1/2."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError("auc needs at least one positive and one negative score")
    diff = pos[:, None] - neg[None, :]
    wins = int(np.count_nonzero(diff > 0)) + 0.5 * int(np.count_nonzero(diff == 0))
    return wins / (pos.size * neg.size)


def auc_rank(pos_scores, neg_scores) -> float:
    """Same quantity as :func:`auc` via the Mann-Whitney rank sum (mid-ranks)."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError("auc needs at least one positive and one negative score")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u) / (pos.size * neg.size)


def _stratum(s: ScoredSet, group_mask, label=None):
    m = group_mask if label is None else group_mask & (s.label == label)
    return s.score[m]


def _auc_named(pos, neg, name):
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError(f"empty stratum for {name}")
    return auc(pos, neg)


def _auc_triplet(s: ScoredSet, mg, mh, tag) -> tuple:
    intra = abs(_auc_named(_stratum(s, mg, 1), _stratum(s, mg, 0), f"IntraAUC ({tag[0]})")
                - _auc_named(_stratum(s, mh, 1), _stratum(s, mh, 0), f"IntraAUC ({tag[1]})"))
    inter = abs(_auc_named(_stratum(s, mg, 1), _stratum(s, mh, 0), f"InterAUC ({tag[0]} pos vs {tag[1]} neg)")
                - _auc_named(_stratum(s, mh, 1), _stratum(s, mg, 0), f"InterAUC ({tag[1]} pos vs {tag[0]} neg)"))
    gauc = 2.0 * abs(_auc_named(s.score[mg], s.score[mh], f"GAUC ({tag[0]} vs {tag[1]})") - 0.5)
    return intra, inter, gauc


def auc_fairness(examples, aggregation: str = "max") -> tuple:
    """(IntraAUC, InterAUC, GAUC).

    IntraAUC compares the within-group AUCs, InterAUC compares the two
    cross-group AUCs (positives of one group against negatives of the other),
    GAUC measures how well the score alone separates two groups.
    """
    s = as_scored(examples)
    groups = s.groups
    if aggregation == "mean_adjacent":
        if len(groups) == 2:
            splits = [(s.group == groups[0], s.group == groups[1], (f"group {groups[0]}", f"group {groups[1]}"))]
        else:
            splits = [(s.group == g, s.group != g, (f"group {g}", f"not group {g}")) for g in groups]
        trip = [_auc_triplet(s, mg, mh, tag) for mg, mh, tag in splits]
        return tuple(float(np.mean(col)) for col in zip(*trip)) if trip else (0.0, 0.0, 0.0)
    _pairs(groups, aggregation)
    trip = [_auc_triplet(s, s.group == g, s.group == h, (f"group {g}", f"group {h}"))
            for g, h in itertools.combinations(groups, 2)]
    return tuple(float(max(col)) for col in zip(*trip)) if trip else (0.0, 0.0, 0.0)


def _histograms(s: ScoredSet, n_buckets: int, normalize: bool) -> dict:
    scores = s.score
    if normalize:
        lo, hi = scores.min(), scores.max()
        scores = (scores - lo) / (hi - lo)
    elif np.any((scores < 0) | (scores > 1)):
        raise ValueError("scores must lie in [0, 1] when normalize=False")
    idx = np.clip(np.floor(scores * n_buckets).astype(np.int64), 0, n_buckets - 1)
    return {g: np.bincount(idx[s.group == g], minlength=n_buckets) / np.count_nonzero(s.group == g)
            for g in s.groups}


def _kl(p, q) -> float:
    p = (p + SMOOTHING) / (p + SMOOTHING).sum()
    q = (q + SMOOTHING) / (q + SMOOTHING).sum()
    return float(np.sum(p * np.log(p / q)))


def _wd(p, q) -> float:
    # unit distance = one bucket; reported on the [0, 1] score scale
    return float(np.sum(np.abs(np.cumsum(p - q)))) / p.size


def dist_metrics(examples, n_buckets: int = 100, aggregation: str = "max", normalize: bool = True) -> tuple:
    """(Wasserstein-1, KL) between per-group histograms of the scores.

    Scores are min-max normalised over the pooled set (unless
    ``normalize=False``, for scores already in [0, 1]) and bucketed into
    ``n_buckets`` equal-width bins. KL uses histograms smoothed by
    ``SMOOTHING`` per bin; the Wasserstein distance uses the raw histograms.
    """
    if n_buckets < 2:
        raise ValueError("n_buckets must be >= 2")
    s = as_scored(examples)
    if len(s.groups) < 2:
        raise UndefinedMetricError("distance metrics need at least two non-empty groups")
    if not np.all(np.isfinite(s.score)):
        raise ValueError("scores must be finite")
    if normalize and s.score.min() == s.score.max():
        return 0.0, 0.0
    hist = _histograms(s, n_buckets, normalize)
    pairs = _pairs(s.groups, aggregation)
    wd = [_wd(hist[g], hist[h]) for g, h in pairs]
    if aggregation == "max":
        kl = [_kl(hist[g], hist[h]) for g, h in itertools.permutations(s.groups, 2)]
    else:
        kl = [_kl(hist[g], hist[h]) for g, h in pairs]
    return _aggregate(wd, aggregation), _aggregate(kl, aggregation)


@dataclass(frozen=True)
class MetricsReport:
    acc: float
    delta_dp: float
    delta_eo: float
    delta_ed: float
    intra_auc: float
    inter_auc: float
    gauc: float
    wd: float
    kl: float

    PERCENT = ("acc", "delta_dp", "delta_eo", "delta_ed")

    def as_dict(self) -> dict:
        return asdict(self)

    def display(self) -> dict:
        """Percent scale for accuracy and the three gap metrics."""
        return {k: v * 100.0 if k in self.PERCENT else v for k, v in asdict(self).items()}

    def to_csv(self, path, display: bool = True) -> None:
        vals = self.display() if display else self.as_dict()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            for k, v in vals.items():
                w.writerow([k, format(v, ".17g")])

    @classmethod
    def from_csv(cls, path, display: bool = True) -> "MetricsReport":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        vals = {k: float(v) for k, v in rows}
        if display:
            vals = {k: v / 100.0 if k in cls.PERCENT else v for k, v in vals.items()}
        return cls(**{f.name: vals[f.name] for f in fields(cls)})


def evaluate_scored(examples, n_buckets: int = 100, aggregation: str = "max") -> MetricsReport:
    s = as_scored(examples)
    dp, eo, ed = group_gap_metrics(s, aggregation)
    intra, inter, gauc = auc_fairness(s, aggregation)
    wd, kl = dist_metrics(s, n_buckets, aggregation)
    return MetricsReport(accuracy(s), dp, eo, ed, intra, inter, gauc, wd, kl)


def write_scored_csv(examples, path) -> None:
    s = as_scored(examples)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "score", "pred", "label", "group"])
        for i in range(len(s)):
            w.writerow([i, format(float(s.score[i]), ".17g"), int(s.pred[i]), int(s.label[i]), int(s.group[i])])


def read_scored_csv(path) -> ScoredSet:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["id", "score", "pred", "label", "group"]:
        raise ValueError(f"{path}: line 1: header must be id,score,pred,label,group")
    out = []
    for ln, row in enumerate(rows[1:], start=2):
        try:
            _, score, pred, label, group = row
            out.append(ScoredExample(float(score), int(pred), int(label), int(group)))
        except ValueError as exc:
            raise ValueError(f"{path}: line {ln}: {exc}") from None
    return as_scored(out)
