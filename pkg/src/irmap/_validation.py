"""Input checks shared by the estimators."""

import numbers

import numpy as np
from sklearn.utils.validation import check_array, check_X_y


class FitError(RuntimeError):
    """A model could not be fitted (singular system, divergence, ...)."""


def check_points(X, *, min_samples=1, n_features=None):
    X = check_array(X, dtype=np.float64, ensure_min_samples=min_samples)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, expected {n_features}")
    return X


def check_training(X, y, *, min_samples=1):
    X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True, ensure_min_samples=min_samples)
    return X, np.asarray(y, dtype=np.float64)


def check_positive(name, value, *, strict=True):
    if not isinstance(value, numbers.Real) or isinstance(value, bool) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_count(name, value, *, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
