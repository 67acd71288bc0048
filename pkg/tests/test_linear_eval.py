import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from sofclr.data import DataError, Dataset
from sofclr.fairmetrics import ScoredSet, evaluate_scored
from sofclr.linear_eval import (
    LinearProbe,
    Probe,
    _loss,
    best_response_accuracy,
    embed_all,
    evaluate_probe,
    fit_probe,
    probe_scores,
)
from sofclr.models import EncoderSpec, encode, init_params

from . import oracles

SPEC = EncoderSpec(d_in=4, hidden=(5,), d=3)


def _w(seed=42):
    return init_params(SPEC, np.random.default_rng(seed))


def test_embeddings_are_unit_rows_matching_the_oracle():
    X = np.random.default_rng(0).normal(size=(6, 4))
    w = _w()
    Z = embed_all(SPEC, w, X)
    np.testing.assert_allclose(np.linalg.norm(Z, axis=1), 1.0, atol=1e-12)
    for i in range(6):
        np.testing.assert_allclose(Z[i], oracles.encode(w, SPEC.layer_dims, X[i]), atol=1e-13)


def test_identity_encoder_normalizes_raw_features():
    spec = EncoderSpec(d_in=3, hidden=(), d=3)
    w = np.concatenate([np.eye(3).ravel(), np.zeros(3)])
    X = np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 2.0]])
    np.testing.assert_allclose(embed_all(spec, w, X), X / np.linalg.norm(X, axis=1, keepdims=True))
    with pytest.raises(ValueError):
        embed_all(spec, w, np.ones((2, 4)))


def test_zero_iterations_predict_one_half():
    p = fit_probe(np.ones((4, 2)), [0, 1, 0, 1], iters=0)
    assert not p.trained
    np.testing.assert_array_equal(p.predict_proba(np.ones((3, 2))), 0.5)


def test_separable_data_is_fit_perfectly():
    rng = np.random.default_rng(1)
    Z = rng.normal(size=(100, 3))
    y = (Z[:, 0] > 0).astype(int)
    Z[:, 0] += np.where(y == 1, 0.5, -0.5)
    p = fit_probe(Z, y, l2=0.0, iters=2000, lr=1.0)
    assert np.mean((p.predict_proba(Z) >= 0.5) == y) == 1.0


@given(st.integers(0, 10_000), st.floats(0, 0.1))
def test_label_flip_negates_weights_exactly(seed, l2):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(20, 3))
    y = np.arange(20) % 2
    a, b = fit_probe(Z, y, l2=l2, iters=50), fit_probe(Z, 1 - y, l2=l2, iters=50)
    np.testing.assert_array_equal(a.weights, -b.weights)
    assert a.bias == -b.bias


@given(st.integers(0, 10_000))
def test_probe_loss_is_non_increasing(seed):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(30, 4)) * rng.uniform(0.1, 5)
    y = rng.integers(0, 2, size=30)
    y[:2] = (0, 1)
    probes = [fit_probe(Z, y, 1e-3, k, 10.0) for k in range(12)]
    losses = [_loss(Z, y, p.weights, p.bias, 1e-3) for p in probes]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_probe_input_validation():
    with pytest.raises(ValueError):
        fit_probe(np.ones((3, 2)), [1, 1, 1])
    with pytest.raises(ValueError):
        fit_probe(np.ones((3, 2)), [0, 1, 2])


def _test_set(n=12, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset.from_arrays(rng.normal(size=(n, 4)), [i % 2 for i in range(n)], [(i // 2) % 2 for i in range(n)])


def test_evaluate_probe_is_a_composition():
    test = _test_set()
    w = _w()
    probe = Probe(np.array([0.5, -1.0, 2.0]), 0.1)
    s = 1 / (1 + np.exp(-(encode(SPEC, w, test.features) @ probe.weights + probe.bias)))
    expected = evaluate_scored(ScoredSet.from_scores(s, test.labels, test.attrs))
    assert evaluate_probe(probe, SPEC, w, test) == expected


def test_constant_probe_has_no_parity_gap():
    rep = evaluate_probe(Probe(np.zeros(3), 0.3), SPEC, _w(), _test_set())
    assert rep.delta_dp == 0.0


def test_group_separating_scores_give_full_gauc():
    test = _test_set()
    s = ScoredSet.from_scores(np.where(test.attrs == 1, 0.9, 0.1), test.labels, test.attrs)
    assert evaluate_scored(s).gauc == 1.0


def test_test_set_needs_labels_and_attributes():
    ds = Dataset.from_arrays(np.zeros((2, 4)), [0, None], [0, 1])
    with pytest.raises(DataError):
        probe_scores(Probe(np.zeros(3), 0.0), SPEC, _w(), ds)


def test_sklearn_wrapper_matches_function_and_clones():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(40, 3))
    y = np.where(X[:, 1] > 0, "yes", "no")
    est = LinearProbe(iters=100).fit(X, y)
    ref = fit_probe(X, (y == "yes").astype(int), 1e-4, 100, 0.1)
    np.testing.assert_array_equal(est.decision_function(X), ref.decision_function(X))
    assert set(est.predict(X)) <= {"yes", "no"}
    assert clone(est).get_params() == {"l2": 1e-4, "iters": 100, "lr": 0.1}


def test_best_response_detects_obvious_signal():
    rng = np.random.default_rng(5)
    a = rng.integers(0, 2, size=400)
    Z = rng.normal(size=(400, 2)) + 3.0 * a[:, None]
    assert best_response_accuracy(Z[:200], a[:200], Z[200:], a[200:]) > 0.95
