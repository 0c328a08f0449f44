"""scikit-learn compatible wrappers around the recurrent least-squares estimate."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .datagen import make_windows
from .network import NetConfig, forward_batch
from .training import EstimatorConfig, OptimizerConfig, beta_n, fit_windows, truncate


def _as_windows(X, k: int, d: int | None = None) -> np.ndarray:
    """Windows from (n_samples, k+1, d) or flattened (n_samples, (k+1)*d), oldest step first."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        if X.shape[1] != k + 1:
            raise ValueError(f"expected windows of k+1={k + 1} steps, got {X.shape[1]}")
        return X
    if X.ndim != 2 or X.shape[1] % (k + 1):
        raise ValueError(f"flattened windows need a multiple of k+1={k + 1} columns, got shape {X.shape}")
    return X.reshape(X.shape[0], k + 1, X.shape[1] // (k + 1))


class WindowTransformer(TransformerMixin, BaseEstimator):
    """Turn a trajectory (n, d) into flattened windows (n-k, (k+1)*d), oldest step first.

    Row ``i`` holds ``X[i], ..., X[i+k]`` and pairs with target ``y[i+k]``.
    """

    def __init__(self, k=2):
        self.k = k

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        self.n_features_in_ = 1 if X.ndim == 1 else X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        windows = make_windows(X, self.k)
        return windows.reshape(windows.shape[0], -1)

    def targets(self, y):
        """Targets aligned with :meth:`transform` rows."""
        return np.asarray(y, dtype=np.float64)[self.k :]


class RecurrentRegressor(RegressorMixin, BaseEstimator):
    """Truncated least-squares recurrent ReLU network regression.

    ``X`` holds windows of ``k+1`` consecutive inputs, oldest first, either as
    (n_samples, k+1, d) or flattened to (n_samples, (k+1)*d). Predictions are
    clipped to ``+-c2 * log(n)`` where ``n = n_samples + k`` is the length of
    the trajectory the windows came from.
    """

    def __init__(self, k=2, k1=8, k2=8, l1=2, l2=2, hidden_bias=False, c2=1.0,
                 learning_rate=0.01, steps=1500, restarts=2, batch="full",
                 moment_decay_1=0.9, moment_decay_2=0.999, init_scale=2.0, random_state=0):
        self.k = k
        self.k1 = k1
        self.k2 = k2
        self.l1 = l1
        self.l2 = l2
        self.hidden_bias = hidden_bias
        self.c2 = c2
        self.learning_rate = learning_rate
        self.steps = steps
        self.restarts = restarts
        self.batch = batch
        self.moment_decay_1 = moment_decay_1
        self.moment_decay_2 = moment_decay_2
        self.init_scale = init_scale
        self.random_state = random_state

    def _config(self, d: int) -> EstimatorConfig:
        net = NetConfig(k=self.k, d=d, k1=self.k1, k2=self.k2, l1=self.l1, l2=self.l2,
                        hidden_bias=self.hidden_bias)
        opt = OptimizerConfig(learning_rate=self.learning_rate, steps=self.steps, restarts=self.restarts,
                              batch=self.batch, moment_decay_1=self.moment_decay_1,
                              moment_decay_2=self.moment_decay_2)
        seed = 0 if self.random_state is None else int(self.random_state)
        return EstimatorConfig(net=net, c2=self.c2, optimizer=opt, init_scale=self.init_scale, seed=seed)

    def fit(self, X, y):
        windows = _as_windows(X, self.k)
        flat = windows.reshape(windows.shape[0], -1)
        flat, y = validate_data(self, flat, y, y_numeric=True)
        windows = flat.reshape(windows.shape)
        self.network_, self.report_ = fit_windows(windows, y, self._config(windows.shape[2]))
        self.n_train_ = windows.shape[0] + self.k
        return self

    def decision_function(self, X):
        """Untruncated network output."""
        check_is_fitted(self, "network_")
        windows = _as_windows(X, self.k)
        flat = validate_data(self, windows.reshape(windows.shape[0], -1), reset=False)
        out, _ = forward_batch(self.network_, flat.reshape(windows.shape))
        return out

    def predict(self, X):
        return truncate(self.decision_function(X), beta_n(self.n_train_, self.c2))
