"""scikit-learn style wrappers around the from-scratch networks."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ..core import softmax_rows
from .functional import forward, train_local
from .models import MlpModel, RnnModel


class _NetClassifier(ClassifierMixin, BaseEstimator):
    def _encode(self, y):
        self.classes_, y_idx = np.unique(np.asarray(y), return_inverse=True)
        return y_idx

    def _build(self, X, n_classes, rng):
        raise NotImplementedError

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y_idx = self._encode(y)
        rng = np.random.default_rng(self.random_state)
        model = self._build(X, len(self.classes_), rng)
        self.model_ = train_local(model, X, y_idx, self.epochs, self.batch_size, self.lr, rng)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return forward(self.model_, np.asarray(X, dtype=np.float64))

    def predict_proba(self, X):
        return softmax_rows(self.decision_function(X))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]


class MlpClassifier(_NetClassifier):
    """Relu MLP trained with Adam on cross-entropy; ``X`` is ``(n, d)``."""

    def __init__(self, hidden: Sequence[int] = (64,), epochs: int = 5, batch_size: int = 64,
                 lr: float = 1e-3, random_state: Optional[int] = None):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state

    def _build(self, X, n_classes, rng):
        return MlpModel.init([X.shape[1], *self.hidden, n_classes], rng)


class RnnClassifier(_NetClassifier):
    """Elman RNN classifier; ``X`` is ``(n, T, d)``."""

    def __init__(self, hidden: int = 16, epochs: int = 5, batch_size: int = 64, lr: float = 1e-3,
                 random_state: Optional[int] = None):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state

    def _build(self, X, n_classes, rng):
        return RnnModel.init(X.shape[2], self.hidden, n_classes, rng)
