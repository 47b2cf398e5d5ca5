"""
Variography and ordinary kriging.

Variogram shapes use the practical-range convention: the exponential and
gaussian models reach 95% of the partial sill at ``range``. ``sill`` is the
partial sill, so every model tends to ``nugget + sill`` at large lags.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import minimize
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import FitError, check_count, check_points, check_training

SHAPES = ("spherical", "exponential", "gaussian", "pure_nugget")
STANDARD_SHAPES = ("spherical", "exponential", "gaussian")

DEDUP_RADIUS = 1e-12
JITTER = 1e-10


@dataclass(frozen=True)
class VariogramModel:
    shape: str
    nugget: float
    sill: float
    range: float

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown variogram shape {self.shape!r}; expected one of {SHAPES}")
        if self.nugget < 0 or self.sill < 0:
            raise ValueError("nugget and sill must be non-negative")
        if not self.range > 0:
            raise ValueError("range must be positive")

    def __call__(self, h):
        return gamma(self, h)

    @property
    def nugget_ratio(self) -> float:
        total = self.nugget + self.sill
        return 1.0 if total <= 0 else self.nugget / total

    def to_dict(self) -> dict:
        return {"shape": self.shape, "nugget": self.nugget, "sill": self.sill, "range": self.range}

    @classmethod
    def from_dict(cls, d) -> "VariogramModel":
        return cls(str(d["shape"]), float(d["nugget"]), float(d["sill"]), float(d["range"]))


def gamma(model: VariogramModel, h):
    """Semivariance at lag(s) ``h``; ``gamma(0) == 0`` for every shape."""
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("lags must be non-negative")
    a = model.range
    if model.shape == "spherical":
        r = np.minimum(h / a, 1.0)
        g = model.nugget + model.sill * (1.5 * r - 0.5 * r ** 3)
    elif model.shape == "exponential":
        g = model.nugget + model.sill * -np.expm1(-3.0 * h / a)
    elif model.shape == "gaussian":
        g = model.nugget + model.sill * -np.expm1(-3.0 * (h / a) ** 2)
    else:
        g = np.full_like(h, model.nugget)
    g = np.where(h > 0, g, 0.0)
    return float(g) if g.ndim == 0 else g


@dataclass(frozen=True)
class EmpiricalVariogram:
    h: np.ndarray
    gamma: np.ndarray
    pairs: np.ndarray
    max_lag: float
    n_bins: int

    @property
    def lags(self) -> list[tuple[float, float, int]]:
        return [(float(a), float(b), int(c)) for a, b, c in zip(self.h, self.gamma, self.pairs)]

    def usable(self) -> np.ndarray:
        return self.pairs > 0

    def to_rows(self) -> list[tuple[float, float, int]]:
        return self.lags


def _pair_blocks(X, chunk=1024):
    """Yield (distances, i-block, j-block) over all pairs i < j, blockwise."""
    n = len(X)
    for lo in range(0, n - 1, chunk):
        hi = min(lo + chunk, n)
        d = cdist(X[lo:hi], X[lo + 1:])
        ii = np.arange(lo, hi)[:, None]
        jj = np.arange(lo + 1, n)[None, :]
        keep = jj > ii
        yield d[keep], np.broadcast_to(ii, d.shape)[keep], np.broadcast_to(jj, d.shape)[keep]


def max_pairwise_distance(X) -> float:
    X = check_points(X)
    if len(X) > 3 and X.shape[1] == 2:
        from scipy.spatial import ConvexHull, QhullError
        try:
            X = X[ConvexHull(X).vertices]
        except QhullError:
            pass
    return float(max((d.max() for d, _, _ in _pair_blocks(X) if d.size), default=0.0))


def empirical_variogram(X, z, n_bins: int = 15, max_lag: float | None = None) -> EmpiricalVariogram:
    """Matheron estimator on ``n_bins`` equal-width lag bins over (0, max_lag].

    Bin centres are the mean pair distance of non-empty bins and the bin
    midpoint otherwise. ``max_lag`` defaults to half the largest pairwise
    distance.
    """
    X = check_points(X, min_samples=2)
    z = np.asarray(z, dtype=float)
    if len(z) != len(X):
        raise ValueError("X and z differ in length")
    n_bins = check_count("n_bins", n_bins)
    if max_lag is None:
        max_lag = 0.5 * max_pairwise_distance(X)
    if not max_lag > 0:
        raise ValueError("max_lag must be positive")
    sq = np.zeros(n_bins)
    hs = np.zeros(n_bins)
    cnt = np.zeros(n_bins, dtype=np.int64)
    for d, i, j in _pair_blocks(X):
        keep = (d > 0) & (d <= max_lag)
        d, i, j = d[keep], i[keep], j[keep]
        b = np.minimum((d / max_lag * n_bins).astype(np.int64), n_bins - 1)
        # lags sitting exactly on an upper edge belong to the lower bin
        on_edge = (b > 0) & (b * max_lag / n_bins >= d)
        b[on_edge] -= 1
        sq += np.bincount(b, weights=(z[i] - z[j]) ** 2, minlength=n_bins)
        hs += np.bincount(b, weights=d, minlength=n_bins)
        cnt += np.bincount(b, minlength=n_bins)
    mid = (np.arange(n_bins) + 0.5) * max_lag / n_bins
    nz = cnt > 0
    h = np.where(nz, hs / np.maximum(cnt, 1), mid)
    g = np.where(nz, sq / (2.0 * np.maximum(cnt, 1)), 0.0)
    return EmpiricalVariogram(h, g, cnt, float(max_lag), n_bins)


def _wls_loss(shape, h, g, w):
    def loss(p):
        model_g = gamma(VariogramModel(shape, p[0], p[1], p[2]), h)
        return float(np.sum(w * (g - model_g) ** 2))
    return loss


def fit_variogram(emp: EmpiricalVariogram, shape: str = "spherical") -> VariogramModel:
    """Weighted least-squares fit with weights ``pairs / h**2``.

    Multi-start bounded Nelder-Mead over (nugget, sill, range) in a unit box:
    nugget and sill in [0, 2 max(gamma_hat)], range in (0, 2 max_lag].
    An all-zero variogram returns nugget = sill = 0 and the smallest
    admissible range.
    """
    if shape not in SHAPES:
        raise ValueError(f"unknown variogram shape {shape!r}")
    ok = emp.usable()
    if ok.sum() < 3:
        raise FitError(f"need at least 3 non-empty lag bins, got {int(ok.sum())}")
    h, g, n = emp.h[ok], emp.gamma[ok], emp.pairs[ok].astype(float)
    w = n / h ** 2
    w = w / w.sum()
    r_hi = 2.0 * emp.max_lag
    r_lo = 1e-6 * r_hi
    g_max = float(g.max())
    if g_max <= 0:
        return VariogramModel(shape, 0.0, 0.0, r_lo)
    if shape == "pure_nugget":
        return VariogramModel(shape, float(np.sum(w * g)), 0.0, float(emp.max_lag))

    s_hi = 2.0 * g_max
    scale = np.array([s_hi, s_hi, r_hi])
    loss = _wls_loss(shape, h, g, w)

    def scaled(p):
        return loss(np.clip(p, [0.0, 0.0, r_lo / r_hi], 1.0) * scale)

    bounds = [(0.0, 1.0), (0.0, 1.0), (r_lo / r_hi, 1.0)]
    best = None
    for nug in (0.0, 0.25, 0.5):
        for rng in (0.1, 0.3, 0.6):
            x0 = np.array([nug * g_max, (1.0 - nug) * g_max, rng * r_hi]) / scale
            res = minimize(scaled, x0, method="Nelder-Mead", bounds=bounds,
                           options={"xatol": 1e-10, "fatol": 1e-16, "maxiter": 4000})
            if best is None or res.fun < best.fun:
                best = res
    # restart from the best vertex; Nelder-Mead simplices can collapse early
    for _ in range(3):
        res = minimize(scaled, best.x, method="Nelder-Mead", bounds=bounds,
                       options={"xatol": 1e-12, "fatol": 1e-20, "maxiter": 4000})
        if res.fun < best.fun:
            best = res
        else:
            break
    p = np.clip(best.x, [0.0, 0.0, r_lo / r_hi], 1.0) * scale
    return VariogramModel(shape, float(p[0]), float(p[1]), float(p[2]))


def fit_best_variogram(emp: EmpiricalVariogram, shapes=STANDARD_SHAPES) -> tuple[VariogramModel, float]:
    """Fit each shape and keep the smallest weighted residual."""
    ok = emp.usable()
    h, g, n = emp.h[ok], emp.gamma[ok], emp.pairs[ok].astype(float)
    w = n / h ** 2
    w = w / w.sum()
    best, best_loss = None, np.inf
    for shape in shapes:
        m = fit_variogram(emp, shape)
        val = float(np.sum(w * (g - gamma(m, h)) ** 2))
        if val < best_loss:
            best, best_loss = m, val
    return best, best_loss


def deduplicate(X, z, radius: float = DEDUP_RADIUS):
    """Merge points closer than ``radius`` into one point carrying the mean value."""
    X = check_points(X)
    z = np.asarray(z, dtype=float)
    pairs = cKDTree(X).query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return X, z
    n = len(X)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    k, labels = connected_components(graph, directed=False)
    counts = np.bincount(labels, minlength=k)
    Xm = np.column_stack([np.bincount(labels, weights=X[:, c], minlength=k) / counts
                          for c in range(X.shape[1])])
    zm = np.bincount(labels, weights=z, minlength=k) / counts
    return Xm, zm


def kriging_matrix(X, model: VariogramModel) -> np.ndarray:
    """Bordered ordinary-kriging matrix ``[[Gamma, 1], [1^T, 0]]``."""
    n = len(X)
    A = np.empty((n + 1, n + 1))
    A[:n, :n] = gamma(model, cdist(X, X))
    A[:n, n] = 1.0
    A[n, :n] = 1.0
    A[n, n] = 0.0
    return A


def _factor(A):
    """LU factors of ``A``; None if LAPACK flags it singular or ill-posed."""
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            lu = scipy.linalg.lu_factor(A)
        except (scipy.linalg.LinAlgWarning, np.linalg.LinAlgError, ValueError):
            return None
    if not np.all(np.isfinite(lu[0])):
        return None
    return lu


@dataclass(frozen=True, eq=False)
class KrigingSystem:
    """Factorised ordinary-kriging system, reusable across queries."""

    X: np.ndarray
    z: np.ndarray
    model: VariogramModel
    matrix: np.ndarray = field(repr=False)
    lu: tuple = field(repr=False)
    jittered: bool = False

    @property
    def n(self) -> int:
        return len(self.z)


def krige_fit(X, z, model: VariogramModel) -> KrigingSystem:
    """Build and factorise the bordered system on deduplicated points.

    A singular system gets ``1e-10`` added to the diagonal semivariances once.
    """
    X, z = check_training(X, z)
    X, z = deduplicate(X, z)
    A = kriging_matrix(X, model)
    lu = _factor(A)
    jittered = False
    if lu is None:
        A = A.copy()
        idx = np.arange(len(X))
        A[idx, idx] += JITTER
        lu = _factor(A)
        jittered = True
        if lu is None:
            raise FitError("ordinary kriging system is singular")
    return KrigingSystem(X, z, model, A, lu, jittered)


def krige_weights(system: KrigingSystem, queries) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weights (q, n), Lagrange multipliers (q,) and right-hand sides (q, n)."""
    Q = check_points(queries, n_features=system.X.shape[1])
    g0 = gamma(system.model, cdist(Q, system.X))
    rhs = np.hstack([g0, np.ones((len(Q), 1))]).T
    sol = scipy.linalg.lu_solve(system.lu, rhs).T
    return sol[:, :-1], sol[:, -1], g0


def krige_predict_many(system: KrigingSystem, queries, chunk: int = 4096):
    """Kriged values and kriging variances at every query row."""
    Q = check_points(queries, n_features=system.X.shape[1])
    rate = np.empty(len(Q))
    var = np.empty(len(Q))
    for lo in range(0, len(Q), chunk):
        w, mu, g0 = krige_weights(system, Q[lo:lo + chunk])
        rate[lo:lo + chunk] = w @ system.z
        var[lo:lo + chunk] = np.einsum("ij,ij->i", w, g0) + mu
    return rate, var


def krige_predict(system: KrigingSystem, query) -> tuple[float, float]:
    rate, var = krige_predict_many(system, np.asarray(query, dtype=float).reshape(1, -1))
    return float(rate[0]), float(var[0])


def krige_local(X, z, model: VariogramModel, queries, n_neighbors: int = 64):
    """Ordinary kriging using only the ``n_neighbors`` closest data per query."""
    X, z = deduplicate(*check_training(X, z))
    Q = check_points(queries, n_features=X.shape[1])
    k = min(int(n_neighbors), len(X))
    _, idx = cKDTree(X).query(Q, k=k)
    idx = idx.reshape(len(Q), k)
    rate = np.empty(len(Q))
    var = np.empty(len(Q))
    for i, (q, nb) in enumerate(zip(Q, idx)):
        system = krige_fit(X[nb], z[nb], model)
        rate[i], var[i] = krige_predict(system, q)
    return rate, var


class OrdinaryKriging(RegressorMixin, BaseEstimator):
    """Ordinary kriging with an automatically fitted variogram.

    Parameters
    ----------
    variogram_model : {"spherical", "exponential", "gaussian", "pure_nugget", "auto"}
        Shape to fit; ``"auto"`` keeps the best weighted fit of the three
        standard shapes.
    variogram_parameters : dict, optional
        Fixed ``{"nugget", "sill", "range"}``; skips fitting.
    n_bins, max_lag
        Binning of the empirical variogram.
    n_neighbors : int, optional
        Local neighbourhood size. ``None`` krige with all points.
    """

    def __init__(self, variogram_model="spherical", variogram_parameters=None,
                 n_bins=15, max_lag=None, n_neighbors=None):
        self.variogram_model = variogram_model
        self.variogram_parameters = variogram_parameters
        self.n_bins = n_bins
        self.max_lag = max_lag
        self.n_neighbors = n_neighbors

    def fit(self, X, y):
        X, y = check_training(X, y)
        if self.variogram_parameters is not None:
            p = self.variogram_parameters
            shape = "spherical" if self.variogram_model == "auto" else self.variogram_model
            self.variogram_ = VariogramModel(shape, float(p["nugget"]), float(p["sill"]),
                                             float(p["range"]))
            self.empirical_variogram_ = None
        else:
            self.empirical_variogram_ = empirical_variogram(X, y, self.n_bins, self.max_lag)
            if self.variogram_model == "auto":
                self.variogram_, _ = fit_best_variogram(self.empirical_variogram_)
            else:
                self.variogram_ = fit_variogram(self.empirical_variogram_, self.variogram_model)
        if self.n_neighbors is None:
            self.system_ = krige_fit(X, y, self.variogram_)
        else:
            check_count("n_neighbors", self.n_neighbors)
            self.system_ = None
        self.X_fit_, self.y_fit_ = X, y
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, return_variance=False):
        check_is_fitted(self, "variogram_")
        if self.system_ is not None:
            rate, var = krige_predict_many(self.system_, X)
        else:
            rate, var = krige_local(self.X_fit_, self.y_fit_, self.variogram_, X, self.n_neighbors)
        return (rate, var) if return_variance else rate


__all__ = [
    "EmpiricalVariogram", "KrigingSystem", "OrdinaryKriging", "VariogramModel",
    "deduplicate", "empirical_variogram", "fit_best_variogram",
    "fit_variogram", "gamma", "krige_fit", "krige_local", "krige_predict",
    "krige_predict_many", "krige_weights", "kriging_matrix",
]
