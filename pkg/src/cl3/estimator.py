"""scikit-learn compatible front end for the dense-network kernel.

MlpClassifier wraps the functional training kernel behind the usual
fit/predict/predict_proba surface so the model composes with sklearn
pipelines, cross-validation, and cloning. Passing init_model continues
training from existing weights (for example a frozen-backbone global
model) instead of a fresh seeded init.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .network import HyperParams, Mlp, forward, init_mlp, train_local
from .rng import derive
from .validation import check_features, check_labels

_TAG_ESTIMATOR_INIT = 51
_TAG_ESTIMATOR_TRAIN = 52


class MlpClassifier(ClassifierMixin, BaseEstimator):
    """Binary MLP classifier trained with seeded mini-batch Adam."""

    def __init__(
        self,
        hidden_dims=(100,),
        learning_rate=1e-3,
        l2=1e-4,
        batch_size=16,
        epochs=25,
        seed=0,
        init_model=None,
    ):
        self.hidden_dims = hidden_dims
        self.learning_rate = learning_rate
        self.l2 = l2
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.init_model = init_model

    def _hyper(self) -> HyperParams:
        return HyperParams(
            learning_rate=self.learning_rate,
            l2=self.l2,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=derive(self.seed, _TAG_ESTIMATOR_TRAIN),
        )

    def fit(self, X, y):
        X = check_features(X)
        y = check_labels(y, n_samples=X.shape[0])
        if self.init_model is not None:
            if self.init_model.input_dim != X.shape[1]:
                raise ValueError(
                    f"init_model expects {self.init_model.input_dim} features, data has {X.shape[1]}"
                )
            base = self.init_model
        else:
            dims = (X.shape[1],) + tuple(int(h) for h in self.hidden_dims) + (2,)
            base = init_mlp(dims, derive(self.seed, _TAG_ESTIMATOR_INIT))
        self.model_ = train_local(base, X, y, self._hyper())
        self.classes_ = np.array([0, 1], dtype=np.int64)
        self.n_features_in_ = X.shape[1]
        return self

    def _check_fitted(self) -> Mlp:
        if not hasattr(self, "model_"):
            raise NotFittedError("this MlpClassifier instance is not fitted yet")
        return self.model_

    def predict_proba(self, X):
        model = self._check_fitted()
        return forward(model, check_features(X, dim=self.n_features_in_))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1).astype(np.int64)
