"""
Sigmoid multilayer perceptron trained by full-batch gradient descent with momentum.

Inputs and targets are standardised with training statistics; hidden layers
use the logistic sigmoid and the output layer is linear. The training loss
is the mean squared error in standardised target units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import FitError, check_count, check_points, check_positive, check_training
from .data import split_80_20

MAX_RESTARTS = 3


@dataclass(frozen=True)
class MlpConfig:
    hidden_layers: tuple[int, ...] = (25, 25)
    learning_rate: float = 0.05
    momentum: float = 0.9
    max_epochs: int = 20000
    patience: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        for w in self.hidden_layers:
            check_count("hidden layer width", w)
        check_positive("learning_rate", self.learning_rate)
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum!r}")
        check_count("max_epochs", self.max_epochs)
        check_count("patience", self.patience)


@dataclass(eq=False)
class MlpModel:
    """Network parameters. ``weights[k]`` has shape (fan_in, fan_out)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.weights]

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        self.x_mean.copy(), self.x_std.copy(), self.y_mean, self.y_std)

    def standardize_x(self, X):
        return (X - self.x_mean) / self.x_std

    def standardize_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def destandardize_y(self, t):
        return np.asarray(t, dtype=float) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {
            "shapes": [list(s) for s in self.shapes],
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "x_mean": self.x_mean.tolist(), "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean, "y_std": self.y_std,
        }

    @classmethod
    def from_dict(cls, d) -> "MlpModel":
        weights = [np.asarray(w, dtype=float).reshape(s) for w, s in zip(d["weights"], d["shapes"])]
        return cls(weights, [np.asarray(b, dtype=float) for b in d["biases"]],
                   np.asarray(d["x_mean"], dtype=float), np.asarray(d["x_std"], dtype=float),
                   float(d["y_mean"]), float(d["y_std"]))


@dataclass
class Gradient:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    loss: float = field(default=np.nan)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


def _sigmoid(a):
    # tanh form avoids overflow warnings for large |a|
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def init_model(layers, rng, x_mean=None, x_std=None, y_mean=0.0, y_std=1.0) -> MlpModel:
    """Weights uniform in +-1/sqrt(fan_in); biases likewise."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layers[:-1], layers[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    n_in = layers[0]
    return MlpModel(weights, biases,
                    np.zeros(n_in) if x_mean is None else np.asarray(x_mean, dtype=float),
                    np.ones(n_in) if x_std is None else np.asarray(x_std, dtype=float),
                    float(y_mean), float(y_std))


def _forward_std(model: MlpModel, Z):
    """Activations of every layer for standardised inputs ``Z``."""
    acts = [Z]
    h = Z
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        a = h @ W + b
        h = a if k == last else _sigmoid(a)
        acts.append(h)
    return acts


def mlp_forward(model: MlpModel, X):
    """Network output in target units; a scalar for a single query point."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    Z = model.standardize_x(np.atleast_2d(X))
    out = model.destandardize_y(_forward_std(model, Z)[-1][:, 0])
    return float(out[0]) if single else out


def mlp_loss(model: MlpModel, X, y) -> float:
    """Mean squared error in standardised target units."""
    Z = model.standardize_x(np.atleast_2d(np.asarray(X, dtype=float)))
    r = _forward_std(model, Z)[-1][:, 0] - model.standardize_y(y)
    return float(np.mean(r * r))


def mlp_gradient(model: MlpModel, X, y) -> Gradient:
    """Backpropagated gradient of ``mlp_loss`` with respect to every weight and bias."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(X) == 0:
        raise ValueError("empty batch")
    acts = _forward_std(model, model.standardize_x(X))
    r = acts[-1][:, 0] - model.standardize_y(y)
    n = len(y)
    delta = (2.0 / n) * r[:, None]
    gw = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for k in range(len(model.weights) - 1, -1, -1):
        gw[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k > 0:
            h = acts[k]
            delta = (delta @ model.weights[k].T) * h * (1.0 - h)
    return Gradient(gw, gb, float(np.mean(r * r)))


@dataclass
class TrainingHistory:
    epoch: list[int] = field(default_factory=list)
    train_rmse: list[float] = field(default_factory=list)
    test_rmse: list[float] = field(default_factory=list)
    best_epoch: int = 0
    restarts: int = 0
    learning_rate: float = np.nan

    def to_csv(self) -> str:
        lines = ["epoch,train_rmse,test_rmse"]
        lines += [f"{e},{a!r},{b!r}" for e, a, b in zip(self.epoch, self.train_rmse, self.test_rmse)]
        return "\n".join(lines) + "\n"


def _standardizer(X_train, y_train):
    x_mean = X_train.mean(axis=0)
    x_std = X_train.std(axis=0)
    x_std[x_std == 0] = 1.0
    y_mean = float(y_train.mean())
    y_std = float(y_train.std())
    return x_mean, x_std, y_mean, (y_std if y_std > 0 else 1.0)


def _run(config, lr, X_train, y_train, X_test, y_test, stats):
    rng = np.random.default_rng(config.seed)
    layers = [X_train.shape[1], *config.hidden_layers, 1]
    model = init_model(layers, rng, *stats)
    velocity_w = [np.zeros_like(w) for w in model.weights]
    velocity_b = [np.zeros_like(b) for b in model.biases]
    Zt = model.standardize_x(X_test)
    hist = TrainingHistory(learning_rate=lr)
    best, best_rmse = model.copy(), np.inf
    for epoch in range(config.max_epochs + 1):
        g = mlp_gradient(model, X_train, y_train)
        if not np.isfinite(g.loss):
            return None, hist
        test_out = model.destandardize_y(_forward_std(model, Zt)[-1][:, 0])
        test_rmse = float(np.sqrt(np.mean((test_out - y_test) ** 2)))
        if not np.isfinite(test_rmse):
            return None, hist
        hist.epoch.append(epoch)
        hist.train_rmse.append(math.sqrt(g.loss) * model.y_std)
        hist.test_rmse.append(test_rmse)
        if test_rmse < best_rmse:
            best, best_rmse, hist.best_epoch = model.copy(), test_rmse, epoch
        elif epoch - hist.best_epoch >= config.patience:
            break
        if epoch == config.max_epochs:
            break
        for k in range(len(model.weights)):
            velocity_w[k] *= config.momentum
            velocity_w[k] -= lr * g.weights[k]
            velocity_b[k] *= config.momentum
            velocity_b[k] -= lr * g.biases[k]
            model.weights[k] += velocity_w[k]
            model.biases[k] += velocity_b[k]
    return best, hist


def mlp_train(config: MlpConfig, X_train, y_train, X_test, y_test) -> tuple[MlpModel, TrainingHistory]:
    """Train with early stopping on the test set.

    History row ``e`` describes the network after ``e`` updates (row 0 is the
    initial network). The returned weights are those of the row with the
    lowest test RMSE. A non-finite loss restarts training from the same
    initialisation with half the learning rate, at most three times.
    """
    X_train, y_train = check_training(X_train, y_train)
    X_test, y_test = check_training(X_test, y_test)
    stats = _standardizer(X_train, y_train)
    lr = config.learning_rate
    for restart in range(MAX_RESTARTS + 1):
        # overflow on a diverging run is expected; the restart below handles it
        with np.errstate(over="ignore", invalid="ignore"):
            model, hist = _run(config, lr, X_train, y_train, X_test, y_test, stats)
        if model is not None:
            hist.restarts = restart
            return model, hist
        lr *= 0.5
    raise FitError(f"MLP training diverged after {MAX_RESTARTS} learning-rate halvings")


class SigmoidMLPRegressor(RegressorMixin, BaseEstimator):
    """Sigmoid MLP regressor with test-set early stopping.

    ``fit`` holds out a seeded 20% of the data for early stopping unless an
    explicit ``eval_set=(X_test, y_test)`` is given.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int, default=(25, 25)
    learning_rate : float, default=0.05
    momentum : float, default=0.9
    max_epochs : int, default=20000
    patience : int, default=200
    random_state : int, default=0
        Seeds both the weight initialisation and the internal split.
    """

    def __init__(self, hidden_layer_sizes=(25, 25), learning_rate=0.05, momentum=0.9,
                 max_epochs=20000, patience=200, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.max_epochs = max_epochs
        self.patience = patience
        self.random_state = random_state

    def _config(self):
        return MlpConfig(tuple(self.hidden_layer_sizes), self.learning_rate, self.momentum,
                         self.max_epochs, self.patience, self.random_state)

    def fit(self, X, y, eval_set=None):
        config = self._config()
        X, y = check_training(X, y)
        if eval_set is None:
            split = split_80_20(len(y), config.seed)
            X_tr, y_tr = X[split.train], y[split.train]
            X_te, y_te = X[split.test], y[split.test]
        else:
            X_tr, y_tr = X, y
            X_te, y_te = check_training(*eval_set)
        self.model_, self.history_ = mlp_train(config, X_tr, y_tr, X_te, y_te)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_points(X, n_features=self.n_features_in_)
        return mlp_forward(self.model_, X)
