"""Scikit-learn style wrappers over the functional training core.

Each estimator stores its constructor arguments verbatim and defers all
work to ``fit``, so the classes compose with pipelines, grid search, and
cross-validation.  Inputs are 2-d float arrays with values in [0, 1];
labels are integer class ids.  Violations raise ``ValueError`` at the
boundary, matching scikit-learn conventions, while the functional layer
underneath keeps its own exception hierarchy.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import AugmentationPolicy, Dataset
from .encoder import EncoderModel, LayerSpec, ScoreHeads
from .knn import build_library, knn_predict
from .pretrain import (
    ClassifierHead,
    TrainConfig,
    pretrain_ssl,
    train_alp,
    train_at,
    train_mat,
    train_supervised,
)
from .sat import SatConfig, sat_train

__all__ = [
    "ContrastiveEncoder",
    "FeatureKnnClassifier",
    "SatFineTuner",
    "SupervisedEncoder",
]


def _checked_inputs(X):
    X = check_array(X, dtype=np.float64)
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        raise ValueError("X values must lie in [0, 1]")
    return X


def _checked_transform_inputs(estimator, X):
    check_is_fitted(estimator)
    X = _checked_inputs(X)
    if X.shape[1] != estimator.n_features_in_:
        raise ValueError(
            f"X has {X.shape[1]} features, but this estimator was fitted "
            f"with {estimator.n_features_in_}"
        )
    return X


def _unlabeled_dataset(X):
    return Dataset(X, np.zeros(len(X), dtype=np.int64), num_classes=1)


class ContrastiveEncoder(BaseEstimator, TransformerMixin):
    """Self-supervised encoder trained on two augmented views per example.

    ``transform`` returns the learned representations; labels passed to
    ``fit`` are ignored.  ``hidden`` and ``rep_dim`` size the two dense
    layers; ``head_hidden`` and ``head_out`` size the pair-scoring heads
    used only during training.
    """

    def __init__(
        self,
        hidden=256,
        rep_dim=128,
        head_hidden=64,
        head_out=64,
        epochs=5,
        batch_size=100,
        lr=1e-3,
        optimizer="adam",
        jitter=0.05,
        mask_prob=0.0,
        flip=False,
        temperature=1.0,
        seed=0,
    ):
        self.hidden = hidden
        self.rep_dim = rep_dim
        self.head_hidden = head_hidden
        self.head_out = head_out
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.optimizer = optimizer
        self.jitter = jitter
        self.mask_prob = mask_prob
        self.flip = flip
        self.temperature = temperature
        self.seed = seed

    def fit(self, X, y=None):
        X = _checked_inputs(X)
        self.n_features_in_ = X.shape[1]
        specs = (
            LayerSpec(self.n_features_in_, self.hidden, "relu"),
            LayerSpec(self.hidden, self.rep_dim, "relu"),
        )
        model = EncoderModel.init(specs, seed=self.seed)
        heads = ScoreHeads.init(
            self.rep_dim,
            self.head_hidden,
            self.head_out,
            seed=self.seed + 1,
            temperature=self.temperature,
        )
        config = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            optimizer=self.optimizer,
            seed=self.seed,
            augment_policy=AugmentationPolicy(
                jitter=self.jitter, mask_prob=self.mask_prob, flip=self.flip
            ),
        )
        self.model_, self.heads_, self.loss_curve_ = pretrain_ssl(
            _unlabeled_dataset(X), model, heads, config
        )
        return self

    def transform(self, X):
        X = _checked_transform_inputs(self, X)
        return self.model_.encode_np(X)


class SupervisedEncoder(BaseEstimator, TransformerMixin):
    """Label-trained encoder with a linear classifier head.

    ``mode`` selects the objective: ``plain`` cross-entropy, ``at``
    adversarial-only, ``mat`` mixed clean plus adversarial, or ``alp``
    clean plus weighted logit pairing.  ``transform`` returns the
    representation layer; ``predict`` applies the trained head.
    """

    _TRAINERS = {
        "plain": train_supervised,
        "at": train_at,
        "mat": train_mat,
        "alp": train_alp,
    }

    def __init__(
        self,
        mode="plain",
        hidden=256,
        rep_dim=128,
        epochs=5,
        batch_size=100,
        lr=1e-3,
        optimizer="adam",
        pgd_epsilon=0.03,
        pgd_step_size=0.01,
        pgd_steps=5,
        alp_weight=0.5,
        seed=0,
    ):
        self.mode = mode
        self.hidden = hidden
        self.rep_dim = rep_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.optimizer = optimizer
        self.pgd_epsilon = pgd_epsilon
        self.pgd_step_size = pgd_step_size
        self.pgd_steps = pgd_steps
        self.alp_weight = alp_weight
        self.seed = seed

    def fit(self, X, y):
        if self.mode not in self._TRAINERS:
            raise ValueError(
                f"mode must be one of {sorted(self._TRAINERS)}, got {self.mode!r}"
            )
        X, y = check_X_y(X, y, dtype=np.float64)
        if X.size and (X.min() < 0.0 or X.max() > 1.0):
            raise ValueError("X values must lie in [0, 1]")
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.unique(y)
        y_idx = np.searchsorted(self.classes_, y)
        specs = (
            LayerSpec(self.n_features_in_, self.hidden, "relu"),
            LayerSpec(self.hidden, self.rep_dim, "relu"),
        )
        model = EncoderModel.init(specs, seed=self.seed)
        head = ClassifierHead.init(
            self.rep_dim, len(self.classes_), seed=self.seed + 1
        )
        config = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            optimizer=self.optimizer,
            seed=self.seed,
            pgd_epsilon=self.pgd_epsilon,
            pgd_step_size=self.pgd_step_size,
            pgd_steps=self.pgd_steps,
            alp_weight=self.alp_weight,
        )
        dataset = Dataset(X, y_idx, num_classes=len(self.classes_))
        self.model_, self.head_, self.loss_curve_ = self._TRAINERS[self.mode](
            dataset, model, head, config
        )
        return self

    def transform(self, X):
        X = _checked_transform_inputs(self, X)
        return self.model_.encode_np(X)

    def predict(self, X):
        X = _checked_transform_inputs(self, X)
        logits = self.head_.apply_np(self.model_.encode_np(X))
        return self.classes_[np.argmax(logits, axis=1)]


class SatFineTuner(BaseEstimator, TransformerMixin):
    """Adversarial fine-tuning of a fitted contrastive encoder.

    ``encoder`` must be a fitted estimator exposing ``model_`` and
    ``heads_`` (a :class:`ContrastiveEncoder` after ``fit``).  The seed
    encoder is left untouched; the tuned copy lives on this estimator.
    Labels passed to ``fit`` are ignored.
    """

    def __init__(
        self,
        encoder=None,
        epochs=5,
        batch_size=100,
        lr=1e-3,
        optimizer="adam",
        epsilon=0.03,
        step_size=0.005,
        attack_steps=10,
        group_size=300,
        group_skip=300,
        seed=0,
    ):
        self.encoder = encoder
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.optimizer = optimizer
        self.epsilon = epsilon
        self.step_size = step_size
        self.attack_steps = attack_steps
        self.group_size = group_size
        self.group_skip = group_skip
        self.seed = seed

    def fit(self, X, y=None):
        if self.encoder is None:
            raise ValueError("SatFineTuner needs a fitted encoder")
        check_is_fitted(self.encoder)
        if not hasattr(self.encoder, "heads_"):
            raise ValueError(
                "encoder must expose contrastive score heads (heads_)"
            )
        X = _checked_inputs(X)
        self.n_features_in_ = X.shape[1]
        config = SatConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            optimizer=self.optimizer,
            epsilon=self.epsilon,
            step_size=self.step_size,
            attack_steps=self.attack_steps,
            group_size=self.group_size,
            group_skip=self.group_skip,
            seed=self.seed,
        )
        self.model_, self.heads_, self.log_ = sat_train(
            self.encoder.model_,
            self.encoder.heads_,
            _unlabeled_dataset(X),
            config,
        )
        return self

    def transform(self, X):
        X = _checked_transform_inputs(self, X)
        return self.model_.encode_np(X)


class FeatureKnnClassifier(BaseEstimator, ClassifierMixin):
    """Majority vote among the k nearest frozen training representations.

    ``encoder`` must be a fitted estimator exposing ``model_``; ``fit``
    freezes the training set's representations into a feature library and
    ``predict`` classifies queries against it.
    """

    def __init__(self, encoder=None, k=75):
        self.encoder = encoder
        self.k = k

    def fit(self, X, y):
        if self.encoder is None:
            raise ValueError("FeatureKnnClassifier needs a fitted encoder")
        check_is_fitted(self.encoder)
        X, y = check_X_y(X, y, dtype=np.float64)
        if X.size and (X.min() < 0.0 or X.max() > 1.0):
            raise ValueError("X values must lie in [0, 1]")
        if not 1 <= self.k <= len(X):
            raise ValueError(
                f"k must lie in [1, {len(X)}], got {self.k}"
            )
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.unique(y)
        y_idx = np.searchsorted(self.classes_, y)
        dataset = Dataset(X, y_idx, num_classes=len(self.classes_))
        self.library_ = build_library(self.encoder.model_, dataset)
        return self

    def predict(self, X):
        X = _checked_transform_inputs(self, X)
        reps = self.encoder.model_.encode_np(X)
        votes = [knn_predict(self.library_, z, self.k)[0] for z in reps]
        return self.classes_[np.asarray(votes, dtype=np.int64)]
