import numpy as np
import pytest
from sklearn.base import clone

from sofclr import FairContrastiveEncoder
from sofclr.data import AugmentOp, SyntheticConfig, gen_synthetic
from sofclr.trainer import TrainConfig

SMALL = dict(hidden=(8,), d=4, disc_hidden=(4,), batch_main=16, batch_attr=8, iters=4, warm_start=1)


def _data(n=80):
    ds = gen_synthetic(SyntheticConfig(n=n, seed=0))
    sens = [float(a) if i % 4 == 0 else np.nan for i, a in enumerate(ds.attrs)]
    return ds.features, sens


def test_default_params_mirror_the_training_config():
    est = FairContrastiveEncoder()
    assert est.train_config() == TrainConfig()
    assert set(est.get_params()) == {f for f in TrainConfig.__dataclass_fields__} | {"n_groups"}


def test_clone_and_set_params():
    est = FairContrastiveEncoder(alpha=0.3, aug_a="gaussian_noise:0.2")
    copy = clone(est)
    assert copy.get_params() == est.get_params()
    copy.set_params(alpha=0.9)
    assert est.alpha == 0.3 and copy.train_config().alpha == 0.9
    assert copy.train_config().aug_a == AugmentOp("gaussian_noise", (0.2,))


def test_fit_transform_gives_unit_embeddings():
    X, sens = _data()
    est = FairContrastiveEncoder(**SMALL)
    Z = est.fit_transform(X, sensitive=sens)
    assert Z.shape == (80, 4)
    np.testing.assert_allclose(np.linalg.norm(Z, axis=1), 1.0, atol=1e-12)
    assert len(est.history_) == 4 and est.n_features_in_ == X.shape[1]
    assert est.dataset_.annotated.size == 20
    p = est.predict_sensitive_proba(X[:3])
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_fit_is_deterministic():
    X, sens = _data()
    a = FairContrastiveEncoder(**SMALL).fit(X, sensitive=sens).transform(X)
    b = FairContrastiveEncoder(**SMALL).fit(X, sensitive=sens).transform(X)
    np.testing.assert_array_equal(a, b)


def test_fit_validation():
    X, sens = _data()
    with pytest.raises(ValueError):
        FairContrastiveEncoder(**SMALL).fit(X)
    with pytest.raises(ValueError):
        FairContrastiveEncoder(**SMALL).fit(X, sensitive=sens[:-1])
    est = FairContrastiveEncoder(**SMALL).fit(X, sensitive=sens)
    with pytest.raises(ValueError):
        est.transform(X[:, :3])
