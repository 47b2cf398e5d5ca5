"""Inverse distance weighting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_count, check_points, check_positive, check_training

_CHUNK = 2048


@dataclass(frozen=True)
class IdwConfig:
    power: float = 2.0
    neighbors: int | None = None  # None means every training point
    tie_epsilon: float = 1e-12

    def __post_init__(self):
        check_positive("power", self.power)
        check_positive("tie_epsilon", self.tie_epsilon)
        if self.neighbors is not None:
            check_count("neighbors", self.neighbors)


def _weighted(d, z, power, tie_epsilon):
    """Row-wise IDW estimate from distance rows ``d`` and matching values ``z``."""
    out = np.empty(d.shape[0])
    tie = d <= tie_epsilon
    has_tie = tie.any(axis=1)
    if has_tie.any():
        t, zt = tie[has_tie], z[has_tie]
        out[has_tie] = (zt * t).sum(axis=1) / t.sum(axis=1)
    rest = ~has_tie
    if rest.any():
        dr = d[rest]
        # scale by the row minimum so the weights stay in (0, 1]
        w = (dr / dr.min(axis=1, keepdims=True)) ** (-power)
        out[rest] = (w * z[rest]).sum(axis=1) / w.sum(axis=1)
    return out


def idw_predict_many(config: IdwConfig, points, values, queries) -> np.ndarray:
    """IDW estimates at every row of ``queries``."""
    points = check_points(points)
    values = np.asarray(values, dtype=float)
    queries = check_points(queries, n_features=points.shape[1])
    if len(values) != len(points):
        raise ValueError("points and values differ in length")
    k = config.neighbors
    if k is not None and k < len(points):
        d, idx = cKDTree(points).query(queries, k=k)
        d, idx = d.reshape(len(queries), k), idx.reshape(len(queries), k)
        return _weighted(d, values[idx], config.power, config.tie_epsilon)
    out = np.empty(len(queries))
    for lo in range(0, len(queries), _CHUNK):
        q = queries[lo:lo + _CHUNK]
        d = cdist(q, points)
        out[lo:lo + _CHUNK] = _weighted(d, np.broadcast_to(values, d.shape),
                                        config.power, config.tie_epsilon)
    return out


def idw_predict(config: IdwConfig, training, query) -> float:
    """IDW estimate at one query from ``training`` rows ``(u, v, rate)``.

    A query within ``tie_epsilon`` of training points returns the mean of
    their rates.
    """
    training = np.asarray(training, dtype=float)
    if training.ndim != 2 or len(training) == 0:
        raise ValueError("training set is empty")
    q = np.asarray(query, dtype=float).reshape(1, -1)
    return float(idw_predict_many(config, training[:, :-1], training[:, -1], q)[0])


class IDWRegressor(RegressorMixin, BaseEstimator):
    """Inverse-distance-weighted interpolator.

    Parameters
    ----------
    power : float, default=2.0
        Exponent of the inverse distance weights.
    n_neighbors : int or None, default=None
        Use only the k nearest training points; ``None`` uses all of them.
    tie_epsilon : float, default=1e-12
        Queries closer than this to a training point return its value.
    """

    def __init__(self, power=2.0, n_neighbors=None, tie_epsilon=1e-12):
        self.power = power
        self.n_neighbors = n_neighbors
        self.tie_epsilon = tie_epsilon

    def _config(self):
        return IdwConfig(self.power, self.n_neighbors, self.tie_epsilon)

    def fit(self, X, y):
        self._config()
        X, y = check_training(X, y)
        self.X_fit_, self.y_fit_ = X, y
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "X_fit_")
        return idw_predict_many(self._config(), self.X_fit_, self.y_fit_, X)
