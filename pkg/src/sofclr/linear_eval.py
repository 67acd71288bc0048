"""Linear evaluation of frozen representations, and a best-response attribute audit."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.neural_network import MLPClassifier
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from .data import Dataset, DataError
from .fairmetrics import MetricsReport, ScoredSet, THRESHOLD, evaluate_scored
from .models import EncoderSpec, encode

__all__ = [
    "Probe",
    "embed_all",
    "fit_probe",
    "evaluate_probe",
    "probe_scores",
    "LinearProbe",
    "best_response_accuracy",
]


@dataclass(frozen=True, eq=False)
class Probe:
    weights: np.ndarray
    bias: float
    trained: bool = True

    def decision_function(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[1] != self.weights.size:
            raise ValueError(f"probe expects {self.weights.size} features, got shape {Z.shape}")
        return Z @ self.weights + self.bias

    def predict_proba(self, Z) -> np.ndarray:
        return expit(self.decision_function(Z))


def embed_all(spec: EncoderSpec, w, data) -> np.ndarray:
    """Encode every row (no augmentation). ``data`` is a Dataset or a matrix."""
    X = data.features if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.d_in:
        raise ValueError(f"encoder expects d_in={spec.d_in}, got shape {X.shape}")
    return encode(spec, w, X)


def _residual(z, y):
    # sigmoid(z) - y, written so that flipping (z, y) -> (-z, 1 - y) negates it exactly
    return np.where(y == 1, -expit(-z), expit(z))


def _loss(Z, y, w, b, l2) -> float:
    z = Z @ w + b
    return float(np.mean(np.logaddexp(0.0, np.where(y == 1, -z, z))) + 0.5 * l2 * (w @ w))


def fit_probe(embeddings, labels, l2: float = 1e-4, iters: int = 500, lr: float = 0.1) -> Probe:
    """L2-regularised logistic regression by full-batch gradient descent from zero.

    The step is capped at the inverse smoothness constant of the objective,
    which makes the loss non-increasing across iterations.
    """
    Z = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    if Z.ndim != 2 or y.shape != (Z.shape[0],):
        raise ValueError("embeddings must be (n, d) with one label per row")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    if np.unique(y).size < 2:
        raise ValueError("need at least one example of each class")
    if l2 < 0 or lr <= 0 or iters < 0:
        raise ValueError("l2 >= 0, lr > 0 and iters >= 0 required")
    n, d = Z.shape
    aug = np.hstack([Z, np.ones((n, 1))])
    smooth = np.linalg.norm(aug, 2) ** 2 / (4.0 * n) + l2
    step = min(lr, 1.0 / smooth)
    w, b = np.zeros(d), 0.0
    for _ in range(iters):
        r = _residual(Z @ w + b, y)
        w = w - step * (Z.T @ r / n + l2 * w)
        b = b - step * (r.sum() / n)
    return Probe(w, float(b), trained=iters > 0)


def probe_scores(probe: Probe, spec: EncoderSpec, w, dataset: Dataset) -> ScoredSet:
    if dataset.label_mask.sum() != dataset.n or dataset.attr_mask.sum() != dataset.n:
        raise DataError("test set needs a label and an attribute on every sample")
    scores = probe.predict_proba(embed_all(spec, w, dataset))
    return ScoredSet.from_scores(scores, dataset.labels, dataset.attrs, THRESHOLD)


def evaluate_probe(probe: Probe, spec: EncoderSpec, w, test: Dataset,
                   n_buckets: int = 100, aggregation: str = "max") -> MetricsReport:
    return evaluate_scored(probe_scores(probe, spec, w, test), n_buckets, aggregation)


class LinearProbe(ClassifierMixin, BaseEstimator):
    """scikit-learn wrapper around :func:`fit_probe` for binary targets."""

    def __init__(self, l2: float = 1e-4, iters: int = 500, lr: float = 0.1):
        self.l2 = l2
        self.iters = iters
        self.lr = lr

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.unique(y)
        if self.classes_.size != 2:
            raise ValueError("LinearProbe is a binary classifier")
        self.n_features_in_ = X.shape[1]
        self.probe_ = fit_probe(X, (y == self.classes_[1]).astype(np.int64), self.l2, self.iters, self.lr)
        return self

    def decision_function(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return self.probe_.decision_function(X)

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return self.classes_[(self.predict_proba(X)[:, 1] >= THRESHOLD).astype(np.int64)]


def best_response_accuracy(Z_train, a_train, Z_test, a_test, hidden=(32,), seed: int = 0,
                           max_iter: int = 1000) -> float:
    """Held-out accuracy of a discriminator trained from scratch on frozen embeddings."""
    clf = MLPClassifier(hidden_layer_sizes=tuple(hidden), max_iter=max_iter, random_state=seed,
                        tol=1e-6, n_iter_no_change=50)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        clf.fit(np.asarray(Z_train), np.asarray(a_train))
    return float(np.mean(clf.predict(np.asarray(Z_test)) == np.asarray(a_test)))
