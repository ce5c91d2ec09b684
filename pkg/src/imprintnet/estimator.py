"""Scikit-learn estimator wrapping the embedding network.

``EmbeddingClassifier`` trains the MLP extractor, embedding layer, and
classifier head with momentum SGD. With ``warm_start=True`` a second
``fit`` fine-tunes the existing weights (every layer at the base learning
rate); a fresh fit trains the embedding layer and head at ``lr_multiplier``
times the base rate, since those start from random initialization.
``imprint`` adds a class to a fitted cosine-head model without any
gradient steps.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import seeding
from .data import oversample_batches, shuffled_batches, train_val_split
from .imprinting import compute_imprinted_vector, imprint_extend_head
from .network import (HEAD_COSINE, NetworkSpec, forward_embed, forward_logits,
                      init_params, predict)
from .tensor import l2_normalize, no_grad
from .training import TrainSettings, batches_per_epoch, train


class EmbeddingClassifier(BaseEstimator, ClassifierMixin):
    """Low-shot-ready classifier over feature vectors.

    Parameters mirror the training protocol: step-decayed momentum SGD,
    class-balanced oversampling, and per-epoch checkpoint selection on
    validation accuracy.
    """

    def __init__(self, hidden_dims=(64, 64), embedding_dim=256, head="cosine",
                 head_bias=True, epochs=40, batch_size=64, base_lr=1e-3,
                 lr_step=4, lr_decay=0.94, lr_multiplier=10.0, momentum=0.9,
                 weight_decay=1e-4, val_frac=0.1, oversample=True,
                 warm_start=False, random_state=None):
        self.hidden_dims = hidden_dims
        self.embedding_dim = embedding_dim
        self.head = head
        self.head_bias = head_bias
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.lr_step = lr_step
        self.lr_decay = lr_decay
        self.lr_multiplier = lr_multiplier
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.val_frac = val_frac
        self.oversample = oversample
        self.warm_start = warm_start
        self.random_state = random_state

    # -- fitting ---------------------------------------------------------

    def _settings(self) -> TrainSettings:
        return TrainSettings(
            epochs=self.epochs, batch_size=self.batch_size, base_lr=self.base_lr,
            lr_step=self.lr_step, lr_decay=self.lr_decay, momentum=self.momentum,
            weight_decay=self.weight_decay,
        )

    def _master_seed(self) -> int:
        if self.random_state is None:
            return int(np.random.SeedSequence().generate_state(1)[0])
        return int(self.random_state)

    def _encode_labels(self, y: np.ndarray) -> np.ndarray:
        order = np.argsort(self.classes_)
        pos = np.searchsorted(self.classes_[order], y)
        pos = np.clip(pos, 0, len(self.classes_) - 1)
        encoded = order[pos]
        if not np.array_equal(self.classes_[encoded], y):
            unseen = sorted(set(np.asarray(y).tolist()) - set(self.classes_.tolist()))
            raise ValueError(f"y contains labels unseen at fit time: {unseen}")
        return encoded.astype(np.int64)

    def fit(self, X, y, X_val=None, y_val=None):
        """Train on (X, y); evaluate checkpoints on (X_val, y_val).

        Without an explicit validation set, a stratified ``val_frac`` slice
        of the training data is held out.
        """
        X, y = check_X_y(X, y, dtype=np.float64)
        if (X_val is None) != (y_val is None):
            raise ValueError("pass X_val and y_val together")
        master = self._master_seed()

        warm = self.warm_start and hasattr(self, "params_")
        if warm:
            if X.shape[1] != self.n_features_in_:
                raise ValueError(
                    f"X has {X.shape[1]} features, model was fitted with "
                    f"{self.n_features_in_}"
                )
        else:
            self.classes_ = np.unique(y)
            if len(self.classes_) < 2:
                raise ValueError("need at least two classes")
            self.n_features_in_ = X.shape[1]
            spec = NetworkSpec(
                input_dim=X.shape[1],
                num_classes=len(self.classes_),
                hidden_dims=tuple(self.hidden_dims),
                embedding_dim=self.embedding_dim,
                head=self.head,
                head_bias=self.head_bias,
            )
            self.params_ = init_params(spec, seeding.derive_rng(master, "init"))

        y_idx = self._encode_labels(np.asarray(y))
        if X_val is not None:
            X_val = check_array(X_val, dtype=np.float64)
            y_val_idx = self._encode_labels(np.asarray(y_val))
            x_train, y_train = X, y_idx
        else:
            local = np.arange(len(y_idx))
            tr, va = train_val_split(local, y_idx, self.val_frac,
                                     seeding.derive_seed(master, "val-split"))
            if va.size == 0:
                raise ValueError("validation split is empty; provide X_val/y_val")
            x_train, y_train = X[tr], y_idx[tr]
            X_val, y_val_idx = X[va], y_idx[va]

        settings = self._settings()
        n = len(y_train)
        total_batches = settings.epochs * batches_per_epoch(n, settings.batch_size)
        stream_seed = seeding.derive_seed(master, "batches")
        if self.oversample:
            stream = oversample_batches(np.arange(n), y_train, settings.batch_size,
                                        total_batches, stream_seed)
        else:
            stream = shuffled_batches(np.arange(n), settings.batch_size,
                                      total_batches, stream_seed)

        # Scope of the fast multiplier on a fresh fit: the cosine head is the
        # base-training configuration, where embedding layer and head are the
        # new layers on the transfer path; in the joint (linear) configuration
        # only the classifier head trains fast. Warm starts have no freshly
        # random layers, so everything moves at the base rate.
        multipliers = None
        if not warm and self.lr_multiplier != 1.0:
            if self.params_.spec.head == HEAD_COSINE:
                fast = self.params_.embedding_and_head()
            else:
                fast = self.params_.head_parameters()
            fast_ids = {id(t) for t in fast}
            multipliers = [self.lr_multiplier if id(t) in fast_ids else 1.0
                           for t in self.params_.parameters()]

        result = train(self.params_, x_train.astype(np.float32), y_train, stream,
                       X_val.astype(np.float32), y_val_idx, settings, multipliers)
        self.params_ = result.best_params
        self.best_epoch_ = result.best_epoch
        self.best_val_accuracy_ = result.best_val_accuracy
        self.validation_scores_ = result.val_accuracies
        self.train_losses_ = result.epoch_losses
        return self

    @classmethod
    def from_model(cls, params, classes, **hyperparams) -> "EmbeddingClassifier":
        """A fitted estimator around existing weights (e.g. a checkpoint)."""
        est = cls(**hyperparams)
        est.set_params(
            hidden_dims=params.spec.hidden_dims,
            embedding_dim=params.spec.embedding_dim,
            head=params.spec.head,
            head_bias=params.spec.head_bias,
        )
        classes = np.asarray(classes)
        if len(classes) != params.spec.num_classes:
            raise ValueError("classes must match the model's class count")
        est.params_ = params
        est.classes_ = classes
        est.n_features_in_ = params.spec.input_dim
        return est

    # -- imprinting ------------------------------------------------------

    def imprint(self, X, class_label, insertion_index=None):
        """Add ``class_label`` by imprinting its head column from ``X``.

        The new column is the renormalized mean of the normalized
        embeddings of ``X``; existing columns are untouched. By default the
        class is appended after the existing ones.
        """
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if class_label in self.classes_:
            raise ValueError(f"class {class_label!r} already exists")
        vector = compute_imprinted_vector(self.params_, X)
        index = len(self.classes_) if insertion_index is None else int(insertion_index)
        self.params_ = imprint_extend_head(self.params_, vector, index)
        self.classes_ = np.insert(self.classes_, index, class_label)
        return self

    # -- inference -------------------------------------------------------

    def _validated(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, model expects {self.n_features_in_}"
            )
        return X.astype(np.float32)

    def decision_function(self, X) -> np.ndarray:
        """Class scores; cosine similarities for the cosine head."""
        X = self._validated(X)
        with no_grad():
            return forward_logits(self.params_, X).data

    def predict(self, X) -> np.ndarray:
        return self.classes_[predict(self.decision_function(X))]

    def predict_proba(self, X) -> np.ndarray:
        """Softmax over the class scores."""
        scores = self.decision_function(X).astype(np.float64)
        scores -= scores.max(axis=1, keepdims=True)
        exp = np.exp(scores)
        return exp / exp.sum(axis=1, keepdims=True)

    def embed(self, X, normalize: bool = True) -> np.ndarray:
        """Embedding vectors; unit-normalized unless ``normalize=False``."""
        X = self._validated(X)
        with no_grad():
            emb = forward_embed(self.params_, X)
            if normalize:
                emb = l2_normalize(emb, axis=1)
        return emb.data
