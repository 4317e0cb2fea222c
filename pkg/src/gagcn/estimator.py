"""scikit-learn style front end for the GAGCN forecaster."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import numkernel as nk
from .decoder import GagcnModel, ModelConfig
from .exceptions import DimensionError
from .motiondata import WindowSet
from .trainer import TrainConfig, data_scale, mae, mpjpe, predict_windows, train


def check_windows(X, name="X", ndim=4):
    """Validate a frame-major ``(W, T, N, C)`` window batch and return it as float64."""
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_all_finite=True, input_name=name)
    if X.ndim != ndim:
        raise DimensionError(f"{name} must be (windows, frames, joints, channels), got shape {X.shape}")
    return X


class GagcnForecaster(TransformerMixin, RegressorMixin, BaseEstimator):
    """Predict ``frames_out`` future poses from a window of observed poses.

    ``fit(X, y)`` takes observed windows ``X`` of shape ``(W, T, N, C)`` and
    future windows ``y`` of shape ``(W, t, N, C)``.  ``predict`` returns
    arrays shaped like ``y``.  ``transform`` returns the per-window spatial
    blending weights of every encoder layer, concatenated.

    ``score`` is the negated MPJPE (or MAE), so larger is better.
    """

    def __init__(self, frames_out=25, width=64, depth=6, n=4, m=3, gated=True, activation="tanh",
                 kernel=3, dilations=(1, 2, 4), residual="offset_from_last_frame", center_joint=0,
                 loss="mpjpe", epochs=50, batch_size=32, learning_rate=1e-3, lr_decay=0.96,
                 max_steps=None, precision="binary32", log_every=10, random_state=0):
        self.frames_out = frames_out
        self.width = width
        self.depth = depth
        self.n = n
        self.m = m
        self.gated = gated
        self.activation = activation
        self.kernel = kernel
        self.dilations = dilations
        self.residual = residual
        self.center_joint = center_joint
        self.loss = loss
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.max_steps = max_steps
        self.precision = precision
        self.log_every = log_every
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
                           lr_decay=self.lr_decay, seed=self.random_state, precision=self.precision,
                           loss_kind=self.loss, n=self.n, m=self.m, log_every=self.log_every,
                           max_steps=self.max_steps)

    def fit(self, X, y, validation=None, gate_logging=True):
        X = check_windows(X)
        y = check_windows(y, "y")
        if y.shape[0] != X.shape[0] or y.shape[2:] != X.shape[2:]:
            raise DimensionError(f"X {X.shape} and y {y.shape} disagree on windows, joints or channels")
        if y.shape[1] != self.frames_out:
            raise DimensionError(f"y has {y.shape[1]} future frames, estimator predicts {self.frames_out}")
        windows = WindowSet(X, y)
        cfg = self._train_config()
        self.scale_ = data_scale(windows) if self.center_joint >= 0 else 1.0
        self.model_ = GagcnModel(ModelConfig(
            joints=X.shape[2], channels=X.shape[3], frames_in=X.shape[1], frames_out=self.frames_out,
            width=self.width, depth=self.depth, n=self.n, m=self.m, gated=self.gated,
            activation=self.activation, kernel=self.kernel, dilations=tuple(self.dilations),
            residual=self.residual, center_joint=self.center_joint, scale=self.scale_,
            precision=self.precision, seed=self.random_state))
        val = None
        if validation is not None:
            val = WindowSet(check_windows(validation[0], "X_val"), check_windows(validation[1], "y_val"))
        result = train(self.model_, windows, cfg, val, gate_logging=gate_logging)
        self.history_ = result.history
        self.steps_ = result.steps
        self.gate_log_ = result.gate_log
        self.n_features_in_ = X.shape[2] * X.shape[3]
        return self

    @classmethod
    def from_model(cls, model):
        """Wrap an already trained :class:`GagcnModel` (e.g. loaded from a checkpoint)."""
        c = model.config
        est = cls(frames_out=c.frames_out, width=c.width, depth=c.depth, n=c.n, m=c.m, gated=c.gated,
                  activation=c.activation, kernel=c.kernel, dilations=c.dilations, residual=c.residual,
                  center_joint=c.center_joint, precision=c.precision, random_state=c.seed)
        est.model_ = model
        est.scale_ = c.scale
        est.n_features_in_ = c.joints * c.channels
        est.history_, est.steps_, est.gate_log_ = [], [], []
        return est

    def _check_input(self, X):
        check_is_fitted(self, "model_")
        X = check_windows(X)
        c = self.model_.config
        if X.shape[1:] != (c.frames_in, c.joints, c.channels):
            raise DimensionError(
                f"X windows {X.shape[1:]} do not match the fitted (T, N, C) = {(c.frames_in, c.joints, c.channels)}")
        return X

    def predict(self, X, threads=1):
        X = self._check_input(X)
        return predict_windows(self.model_, X, threads=threads)

    def transform(self, X):
        X = self._check_input(X)
        if not self.model_.config.gated:
            return np.ones((X.shape[0], len(self.model_.encoder.layers)))
        log = []
        with nk.no_grad():
            self.model_(np.swapaxes(X, -1, -3).astype(self.model_.dtype), log)
        return np.concatenate([entry[1] for entry in log], axis=1)

    def score(self, X, y, sample_weight=None):
        y = check_windows(y, "y")
        pred = self.predict(X)
        return -(mpjpe(pred, y) if self.loss == "mpjpe" else mae(pred, y))
