"""scikit-learn style wrappers around the two training stages.

:class:`MarginEmbedder` pretrains an embedding network on labeled data and
maps inputs to unit embeddings. :class:`SiblingVerifier` fine-tunes a pair
of networks on ID/selfie pairs and scores candidate pairs by cosine
similarity.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .datasets import LabeledDataset, PairDataset
from .errors import ConfigInvalid, DimMismatch
from .losses import MPSConfig, make_am_head, make_l2_head
from .model import EmbeddingModel, ModelConfig, embed, init_model
from .trainer import DEFAULT_AM_MARGIN, DEFAULT_MPS_MARGIN, TrainConfig, finetune, pretrain


def _train_config(est, default_lr):
    schedule = est.lr_schedule if est.lr_schedule is not None else ((0, default_lr),)
    return TrainConfig(batch_size=est.batch_size, total_steps=est.total_steps,
                       lr_schedule=tuple(schedule), momentum=est.momentum,
                       weight_decay=est.weight_decay, rng_seed=est.random_state or 0,
                       warmup_steps=getattr(est, "warmup_steps", 0))


class MarginEmbedder(TransformerMixin, BaseEstimator):
    """Embedding network trained with a margin softmax on class labels.

    ``loss`` is ``"am_softmax"`` (learned scale, additive margin) or
    ``"l2_softmax"`` (fixed scale, no margin).
    """

    def __init__(self, hidden_dims=(64,), embedding_dim=16, activation="relu",
                 loss="am_softmax", margin=DEFAULT_AM_MARGIN, batch_size=128,
                 total_steps=1000, lr_schedule=None, momentum=0.9, weight_decay=5e-4,
                 random_state=0):
        self.hidden_dims = hidden_dims
        self.embedding_dim = embedding_dim
        self.activation = activation
        self.loss = loss
        self.margin = margin
        self.batch_size = batch_size
        self.total_steps = total_steps
        self.lr_schedule = lr_schedule
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ConfigInvalid("need at least two classes")
        seed = self.random_state or 0
        model = init_model(ModelConfig(X.shape[1], tuple(self.hidden_dims),
                                       self.embedding_dim, self.activation, seed))
        n_classes = len(self.classes_)
        if self.loss == "am_softmax":
            head = make_am_head(self.embedding_dim, n_classes, self.margin, seed=seed)
        elif self.loss == "l2_softmax":
            head = make_l2_head(self.embedding_dim, n_classes, seed=seed)
        else:
            raise ConfigInvalid("loss must be 'am_softmax' or 'l2_softmax'")
        self.model_, self.head_, self.loss_trace_ = pretrain(
            model, head, LabeledDataset(X, codes, n_classes), _train_config(self, 0.1))
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DimMismatch(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return embed(self.model_, X)


class SiblingVerifier(BaseEstimator):
    """ID/selfie verifier fine-tuned from a pretrained embedding model.

    ``fit`` takes row-aligned ID and selfie inputs (row ``i`` of both is the
    same subject). ``decision_function`` returns the cosine similarity of
    each aligned pair; ``score_matrix`` scores every ID against every selfie.
    """

    def __init__(self, base_model=None, loss="mps", share_weights=False,
                 mps_margin=DEFAULT_MPS_MARGIN, batch_size=64, total_steps=800,
                 lr_schedule=((0, 0.01), (500, 0.001)), momentum=0.9, weight_decay=5e-4,
                 warmup_steps=0, random_state=0):
        self.base_model = base_model
        self.loss = loss
        self.share_weights = share_weights
        self.mps_margin = mps_margin
        self.batch_size = batch_size
        self.total_steps = total_steps
        self.lr_schedule = lr_schedule
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.warmup_steps = warmup_steps
        self.random_state = random_state

    def _base(self):
        base = self.base_model
        if isinstance(base, MarginEmbedder):
            check_is_fitted(base, "model_")
            base = base.model_
        if not isinstance(base, EmbeddingModel):
            raise ConfigInvalid("base_model must be an EmbeddingModel or a fitted MarginEmbedder")
        return base

    def fit(self, X_id, X_selfie, subject_ids=None):
        X_id, X_selfie = self._check_pair(X_id, X_selfie, fitted=False)
        base = self._base()
        if X_id.shape[1] != base.config.input_dim:
            raise DimMismatch("inputs do not match the base model width")
        ids = np.arange(len(X_id)) if subject_ids is None else np.asarray(subject_ids)
        data = PairDataset(X_id, list(X_selfie), ids)
        self.siblings_, self.loss_trace_ = finetune(
            base, data, _train_config(self, 0.01), MPSConfig(self.mps_margin),
            share_weights=self.share_weights, loss=self.loss)
        self.n_features_in_ = X_id.shape[1]
        return self

    def _check_pair(self, X_id, X_selfie, fitted=True):
        X_id = check_array(X_id, dtype=np.float64)
        X_selfie = check_array(X_selfie, dtype=np.float64)
        if X_id.shape[1] != X_selfie.shape[1]:
            raise DimMismatch("ID and selfie inputs must have the same width")
        if fitted:
            check_is_fitted(self, "siblings_")
            if X_id.shape[1] != self.n_features_in_:
                raise DimMismatch(f"expected {self.n_features_in_} features")
        return X_id, X_selfie

    def transform_id(self, X):
        check_is_fitted(self, "siblings_")
        return embed(self.siblings_.id_model, check_array(X, dtype=np.float64))

    def transform_selfie(self, X):
        check_is_fitted(self, "siblings_")
        return embed(self.siblings_.selfie_model, check_array(X, dtype=np.float64))

    def decision_function(self, X_id, X_selfie):
        X_id, X_selfie = self._check_pair(X_id, X_selfie)
        if X_id.shape[0] != X_selfie.shape[0]:
            raise DimMismatch("decision_function needs row-aligned pairs")
        G, H = self.transform_id(X_id), self.transform_selfie(X_selfie)
        return np.clip(np.einsum("ij,ij->i", G, H), -1.0, 1.0)

    def score_matrix(self, X_id, X_selfie):
        X_id, X_selfie = self._check_pair(X_id, X_selfie)
        return np.clip(self.transform_id(X_id) @ self.transform_selfie(X_selfie).T, -1.0, 1.0)
