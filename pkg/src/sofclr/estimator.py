"""scikit-learn style front end for the fair contrastive encoder."""

from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .data import AugmentOp, Dataset, parse_augment
from .models import discriminate, encode
from .trainer import TrainConfig, train

__all__ = ["FairContrastiveEncoder"]

_D = TrainConfig()


def _missing(v) -> bool:
    return v is None or (isinstance(v, float) and np.isnan(v))


class FairContrastiveEncoder(TransformerMixin, BaseEstimator):
    """Learns unit-norm representations that resist prediction of a sensitive attribute.

    ``fit(X, sensitive=a)`` takes the attribute of each row, with ``None``
    or NaN where it is unknown; only the known rows feed the adversary.
    ``transform`` returns the learned embeddings. Hyperparameters mirror
    :class:`sofclr.trainer.TrainConfig`; augmentations may be given as
    ``"kind:params"`` strings.
    """

    def __init__(
        self,
        alpha=_D.alpha,
        beta=_D.beta,
        gamma=_D.gamma,
        eta=_D.eta,
        eta_prime=_D.eta_prime,
        batch_main=_D.batch_main,
        batch_attr=_D.batch_attr,
        iters=_D.iters,
        optimizer=_D.optimizer,
        lambda_hint=_D.lambda_hint,
        seed=_D.seed,
        tau=_D.tau,
        eps0=_D.eps0,
        hidden=_D.hidden,
        d=_D.d,
        disc_hidden=_D.disc_hidden,
        aug_a=str(_D.aug_a),
        aug_b=str(_D.aug_b),
        warm_start=_D.warm_start,
        adam_beta1=_D.adam_beta1,
        adam_beta2=_D.adam_beta2,
        adam_eps=_D.adam_eps,
        post_update_u=_D.post_update_u,
        n_groups=None,
    ):
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.eta = eta
        self.eta_prime = eta_prime
        self.batch_main = batch_main
        self.batch_attr = batch_attr
        self.iters = iters
        self.optimizer = optimizer
        self.lambda_hint = lambda_hint
        self.seed = seed
        self.tau = tau
        self.eps0 = eps0
        self.hidden = hidden
        self.d = d
        self.disc_hidden = disc_hidden
        self.aug_a = aug_a
        self.aug_b = aug_b
        self.warm_start = warm_start
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.post_update_u = post_update_u
        self.n_groups = n_groups

    def train_config(self) -> TrainConfig:
        kw = {f.name: getattr(self, f.name) for f in fields(TrainConfig)}
        for k in ("aug_a", "aug_b"):
            if not isinstance(kw[k], AugmentOp):
                kw[k] = parse_augment(kw[k])
        return TrainConfig(**kw)

    def fit(self, X, y=None, sensitive=None):
        X = validate_data(self, X, dtype=np.float64)
        if sensitive is None:
            raise ValueError("sensitive attributes are required (use None/NaN for unknown rows)")
        sens = list(sensitive)
        if len(sens) != X.shape[0]:
            raise ValueError(f"sensitive has {len(sens)} entries for {X.shape[0]} rows")
        a = [None if _missing(v) else int(v) for v in sens]
        self.dataset_ = Dataset.from_arrays(X, a, None, self.n_groups)
        cfg = self.train_config()
        self.state_, self.history_ = train(cfg, self.dataset_)
        self.encoder_spec_ = cfg.encoder_spec(X.shape[1])
        self.disc_spec_ = cfg.disc_spec(self.dataset_.K)
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return encode(self.encoder_spec_, self.state_.w, X)

    def predict_sensitive_proba(self, X):
        """Attribute probabilities from the adversary trained alongside the encoder."""
        return discriminate(self.disc_spec_, self.state_.w_prime, self.transform(X))
