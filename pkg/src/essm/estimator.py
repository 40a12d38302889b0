"""scikit-learn compatible wrappers around the eSSM layer."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.metrics import r2_score
from sklearn.utils.validation import check_is_fitted

from ._validation import check_sequences
from .exceptions import InvalidShapeError
from .layer import init_multi_head_layer, layer_forward, multi_head_forward
from .trainer import train


class ESSMRegressor(RegressorMixin, BaseEstimator):
    """Sequence-to-sequence regressor: a multi-head eSSM plus mixer fitted by gradient descent.

    ``X`` is one sequence ``(L, H)`` or a batch ``(B, L, H)``; ``y`` has the
    same leading shape with ``M`` output channels.
    """

    def __init__(
        self,
        n_state=4,
        n_heads=1,
        bidirectional=False,
        kernel_mode="real",
        steps=200,
        learning_rate=0.01,
        random_state=0,
    ):
        self.n_state = n_state
        self.n_heads = n_heads
        self.bidirectional = bidirectional
        self.kernel_mode = kernel_mode
        self.steps = steps
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y):
        X, _ = check_sequences(X)
        y, _ = check_sequences(y, "y")
        if X.shape[:2] != y.shape[:2]:
            raise InvalidShapeError(f"X {X.shape} and y {y.shape} disagree on batch or length")
        layer = init_multi_head_layer(
            X.shape[2],
            self.n_state,
            y.shape[2],
            self.n_heads,
            seed=self.random_state,
            bidirectional=self.bidirectional,
            kernel_mode=self.kernel_mode,
        )
        result = train(layer, X, y, self.steps, self.learning_rate, output="mixer")
        self.layer_ = result.layer
        self.loss_curve_ = result.losses
        self.n_features_in_ = X.shape[2]
        return self

    def predict(self, X):
        check_is_fitted(self, "layer_")
        X, single = check_sequences(X)
        if X.shape[2] != self.n_features_in_:
            raise InvalidShapeError(f"expected {self.n_features_in_} features, got {X.shape[2]}")
        out = np.stack([multi_head_forward(self.layer_, u) for u in X])
        return out[0] if single else out

    def score(self, X, y, sample_weight=None):
        pred = self.predict(X)
        y = np.asarray(y, dtype=float).reshape(pred.shape)
        width = pred.shape[-1]
        return r2_score(y.reshape(-1, width), pred.reshape(-1, width))


class ESSMTransformer(TransformerMixin, BaseEstimator):
    """Untrained HiPPO-initialized eSSM block used as a sequence feature map.

    ``fit`` only reads the feature width; ``transform`` applies the residual
    block (SSM, mixer, gated activation, normalization).
    """

    def __init__(
        self,
        n_state=8,
        n_heads=1,
        bidirectional=False,
        kernel_mode="real",
        norm="batch",
        random_state=0,
    ):
        self.n_state = n_state
        self.n_heads = n_heads
        self.bidirectional = bidirectional
        self.kernel_mode = kernel_mode
        self.norm = norm
        self.random_state = random_state

    def fit(self, X, y=None):
        X, _ = check_sequences(X)
        width = X.shape[2]
        self.layer_ = init_multi_head_layer(
            width,
            self.n_state,
            width,
            self.n_heads,
            seed=self.random_state,
            bidirectional=self.bidirectional,
            kernel_mode=self.kernel_mode,
            norm=self.norm,
        )
        self.n_features_in_ = width
        return self

    def transform(self, X):
        check_is_fitted(self, "layer_")
        X, single = check_sequences(X)
        if X.shape[2] != self.n_features_in_:
            raise InvalidShapeError(f"expected {self.n_features_in_} features, got {X.shape[2]}")
        out = np.stack([layer_forward(self.layer_, u) for u in X])
        return out[0] if single else out
