"""
Rate-surface models: an embedding step in front of any of the four regressors.

``make_surface_model`` returns a scikit-learn ``Pipeline`` whose input is raw
``(maturity_months, day_index)`` pairs. ``dump_model`` / ``load_model``
persist a fitted pipeline as plain JSON.
"""

from __future__ import annotations

import json

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.pipeline import Pipeline
from sklearn.utils.validation import check_is_fitted

from ._validation import check_points
from .data import Dataset, ScalingSpec, embed
from .geostat import OrdinaryKriging, VariogramModel, krige_fit
from .idw import IDWRegressor
from .mlp import MlpModel, SigmoidMLPRegressor, TrainingHistory
from .svr import GaussianSVR, SvrModel

FAMILIES = {
    "idw": IDWRegressor,
    "kriging": OrdinaryKriging,
    "svr": GaussianSVR,
    "mlp": SigmoidMLPRegressor,
}
FORMAT_VERSION = 1


class PanelEmbedding(TransformerMixin, BaseEstimator):
    """Min-max scale ``(maturity, day)`` to ``(u, v)``.

    With ``scaling=None`` the box is learned from the data passed to ``fit``.
    """

    def __init__(self, scaling=None, anisotropy=1.0):
        self.scaling = scaling
        self.anisotropy = anisotropy

    def fit(self, X, y=None):
        X = check_points(X, n_features=2)
        if self.scaling is None:
            self.scaling_ = ScalingSpec.from_points(X[:, 0], X[:, 1], self.anisotropy)
        elif isinstance(self.scaling, ScalingSpec):
            self.scaling_ = self.scaling
        else:
            self.scaling_ = ScalingSpec.from_dict(self.scaling)
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self, "scaling_")
        X = check_points(X, n_features=2)
        u, v = embed(self.scaling_, X[:, 0], X[:, 1])
        return np.column_stack([u, v])


def family_of(estimator) -> str:
    for name, cls in FAMILIES.items():
        if type(estimator) is cls:
            return name
    raise TypeError(f"unsupported estimator {type(estimator).__name__}")


def make_estimator(family: str, **params):
    try:
        cls = FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown model family {family!r}; choose from {sorted(FAMILIES)}") from None
    return cls(**params)


def make_surface_model(estimator, scaling: ScalingSpec | None = None, anisotropy: float = 1.0) -> Pipeline:
    """Pipeline mapping raw panel coordinates through ``estimator``."""
    if isinstance(estimator, str):
        estimator = make_estimator(estimator)
    return Pipeline([("embed", PanelEmbedding(scaling, anisotropy)), ("model", estimator)])


def fit_surface(estimator, dataset: Dataset, index=None, eval_index=None) -> Pipeline:
    """Fit ``estimator`` on (a subset of) ``dataset`` using the dataset's scaling.

    For the MLP, ``eval_index`` selects the early-stopping set.
    """
    pipe = make_surface_model(clone(estimator), dataset.scaling)
    X, y = dataset.coords, dataset.rate
    if index is not None:
        X, y = X[index], y[index]
    kwargs = {}
    if eval_index is not None and isinstance(estimator, SigmoidMLPRegressor):
        kwargs["model__eval_set"] = (pipe[0].fit(X).transform(dataset.coords[eval_index]),
                                     dataset.rate[eval_index])
    return pipe.fit(X, y, **kwargs)


def scaling_of(model: Pipeline) -> ScalingSpec:
    return model.named_steps["embed"].scaling_


def _state(est) -> dict:
    if isinstance(est, IDWRegressor):
        return {"X": est.X_fit_.tolist(), "y": est.y_fit_.tolist()}
    if isinstance(est, OrdinaryKriging):
        return {"X": est.X_fit_.tolist(), "y": est.y_fit_.tolist(),
                "variogram": est.variogram_.to_dict()}
    if isinstance(est, GaussianSVR):
        return {"svr": est.model_.to_dict(), "converged": bool(est.converged_),
                "n_iter": int(est.n_iter_)}
    if isinstance(est, SigmoidMLPRegressor):
        h = est.history_
        return {"mlp": est.model_.to_dict(), "best_epoch": int(h.best_epoch),
                "restarts": int(h.restarts), "learning_rate": float(h.learning_rate)}
    raise TypeError(type(est).__name__)


def _restore(est, state: dict):
    if isinstance(est, IDWRegressor):
        est.X_fit_ = np.asarray(state["X"], dtype=float)
        est.y_fit_ = np.asarray(state["y"], dtype=float)
    elif isinstance(est, OrdinaryKriging):
        est.X_fit_ = np.asarray(state["X"], dtype=float)
        est.y_fit_ = np.asarray(state["y"], dtype=float)
        est.variogram_ = VariogramModel.from_dict(state["variogram"])
        est.empirical_variogram_ = None
        est.system_ = None if est.n_neighbors is not None else krige_fit(est.X_fit_, est.y_fit_, est.variogram_)
    elif isinstance(est, GaussianSVR):
        est.model_ = SvrModel.from_dict(state["svr"])
        est.converged_ = state["converged"]
        est.n_iter_ = state["n_iter"]
    elif isinstance(est, SigmoidMLPRegressor):
        est.model_ = MlpModel.from_dict(state["mlp"])
        est.history_ = TrainingHistory(best_epoch=state["best_epoch"], restarts=state["restarts"],
                                       learning_rate=state["learning_rate"])
    est.n_features_in_ = 2
    return est


def model_to_dict(model: Pipeline, **extra) -> dict:
    est = model.named_steps["model"]
    params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in est.get_params().items()}
    out = {
        "format": FORMAT_VERSION,
        "family": family_of(est),
        "params": params,
        "scaling": scaling_of(model).to_dict(),
        "state": _state(est),
    }
    out.update(extra)
    return out


def model_from_dict(d: dict) -> Pipeline:
    if d.get("format") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format {d.get('format')!r}")
    params = dict(d["params"])
    if d["family"] == "mlp":
        params["hidden_layer_sizes"] = tuple(params["hidden_layer_sizes"])
    est = _restore(make_estimator(d["family"], **params), d["state"])
    emb = PanelEmbedding(ScalingSpec.from_dict(d["scaling"])).fit(np.zeros((1, 2)))
    return Pipeline([("embed", emb), ("model", est)])


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"


def dump_model(model: Pipeline, path, **extra) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(model_to_dict(model, **extra)))


def load_model(path) -> tuple[Pipeline, dict]:
    """Returns the pipeline and the raw JSON document."""
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return model_from_dict(d), d
