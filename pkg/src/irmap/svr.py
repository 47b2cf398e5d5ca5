"""
Epsilon-insensitive support vector regression with a Gaussian kernel.

The dual is solved by SMO over the stacked variables ``a = [alpha; alpha*]``::

    min  1/2 a^T Q a + p^T a
    s.t. sum(s * a) = 0,  0 <= a <= C

with ``s = [+1...; -1...]``, ``Q = (s s^T) * [[K, K], [K, K]]`` and
``p = [eps - y; eps + y]``. The expansion coefficients are
``beta = alpha - alpha*`` and ``f(x) = sum_i beta_i K(x, x_i) + b``.
"""

from __future__ import annotations

import warnings
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.model_selection import GridSearchCV, PredefinedSplit
from sklearn.utils.validation import check_is_fitted

from ._validation import check_count, check_points, check_positive, check_training

FULL_CACHE_LIMIT = 4000
_TAU = 1e-12


def rbf_kernel(sigma: float, p, q) -> float:
    """Gaussian kernel ``exp(-|p - q|^2 / (2 sigma^2))``."""
    d = np.asarray(p, dtype=float) - np.asarray(q, dtype=float)
    return float(np.exp(-np.dot(d, d) / (2.0 * sigma * sigma)))


def rbf_matrix(sigma: float, A, B) -> np.ndarray:
    return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * sigma * sigma))


@dataclass(frozen=True)
class SvrConfig:
    c: float = 10.0
    epsilon: float = 0.01
    sigma: float = 0.1
    tol: float = 1e-3
    max_iter: int = 1_000_000

    def __post_init__(self):
        check_positive("C", self.c)
        check_positive("epsilon", self.epsilon, strict=False)
        check_positive("sigma", self.sigma)
        check_positive("tol", self.tol)
        check_count("max_iter", self.max_iter)


class KernelCache:
    """Column store for the kernel matrix.

    With ``n <= limit`` every column is computed up front. Larger problems
    keep ``max_columns`` columns and evict the least recently used one; the
    SMO loop reads and fills the slots directly.
    """

    def __init__(self, X, sigma, limit=FULL_CACHE_LIMIT, max_columns=None):
        self.X = np.ascontiguousarray(X, dtype=float)
        self.sigma = float(sigma)
        self.n = n = len(X)
        if n <= limit:
            self.slots = np.ascontiguousarray(rbf_matrix(sigma, self.X, self.X))
            self.slot_of = np.arange(n, dtype=np.int64)
            self.owner = np.arange(n, dtype=np.int64)
        else:
            if max_columns is None:
                # about 400 MB of float64 columns
                max_columns = int(5e7 // n)
            k = max(2, min(int(max_columns), n))
            self.slots = np.empty((k, n))
            self.slot_of = np.full(n, -1, dtype=np.int64)
            self.owner = np.full(k, -1, dtype=np.int64)
        self.last_used = np.zeros(len(self.owner), dtype=np.int64)

    @property
    def full(self) -> bool:
        return len(self.owner) == self.n and bool(np.all(self.owner >= 0))

    def column(self, i: int) -> np.ndarray:
        slot = _column_slot(self.X, self.sigma, self.slots, self.slot_of, self.owner,
                            self.last_used, int(i), 0)
        return self.slots[slot]


@njit(cache=True)
def _column_slot(X, sigma, slots, slot_of, owner, last_used, i, clock):
    s = slot_of[i]
    if s < 0:
        s = 0
        for k in range(owner.shape[0]):
            if owner[k] < 0:
                s = k
                break
            if last_used[k] < last_used[s]:
                s = k
        if owner[s] >= 0:
            slot_of[owner[s]] = -1
        owner[s] = i
        slot_of[i] = s
        inv = 1.0 / (2.0 * sigma * sigma)
        for t in range(X.shape[0]):
            d2 = 0.0
            for k in range(X.shape[1]):
                diff = X[t, k] - X[i, k]
                d2 += diff * diff
            slots[s, t] = np.exp(-d2 * inv)
    last_used[s] = clock
    return s


@dataclass
class SmoResult:
    beta: np.ndarray
    b: float
    alpha: np.ndarray
    alpha_star: np.ndarray
    kernel_beta: np.ndarray  # K @ beta at the training points
    iterations: int
    converged: bool
    gap: float
    objective: np.ndarray = field(repr=False)  # dual objective after each update


def dual_objective(K, y, epsilon, beta) -> float:
    """``-1/2 beta^T K beta - eps |beta|_1 + y^T beta`` (to be maximised)."""
    beta = np.asarray(beta, dtype=float)
    return float(-0.5 * beta @ K @ beta - epsilon * np.abs(beta).sum() + y @ beta)


@njit(cache=True)
def _select_pair(y, kb, alpha, alpha_s, c, epsilon):
    """Maximal violating pair in one sweep.

    Returns ``(i, s_i, j, s_j, gap)`` where ``s = +1`` addresses ``alpha`` and
    ``s = -1`` addresses ``alpha*``.
    """
    m_val, M_val = -np.inf, np.inf
    i, si, j, sj = -1, 1.0, -1, 1.0
    for t in range(y.shape[0]):
        r0 = y[t] - kb[t]
        va = r0 - epsilon
        vs = r0 + epsilon
        if alpha[t] < c and va > m_val:
            m_val, i, si = va, t, 1.0
        if alpha_s[t] > 0 and vs > m_val:
            m_val, i, si = vs, t, -1.0
        if alpha[t] > 0 and va < M_val:
            M_val, j, sj = va, t, 1.0
        if alpha_s[t] < c and vs < M_val:
            M_val, j, sj = vs, t, -1.0
    return i, si, j, sj, m_val - M_val


@njit(cache=True)
def _pair_update(ai, aj, Gi, Gj, Qii, Qjj, Qij, si, sj, c):
    """Analytic two-variable step clipped to the box (LIBSVM rules)."""
    if si != sj:
        quad = max(Qii + Qjj + 2.0 * Qij, _TAU)
        delta = (-Gi - Gj) / quad
        diff = ai - aj
        ai += delta
        aj += delta
        if diff > 0:
            if aj < 0:
                aj, ai = 0.0, diff
        elif ai < 0:
            ai, aj = 0.0, -diff
        if diff > 0:
            if ai > c:
                ai, aj = c, c - diff
        elif aj > c:
            aj, ai = c, c + diff
    else:
        quad = max(Qii + Qjj - 2.0 * Qij, _TAU)
        delta = (Gi - Gj) / quad
        total = ai + aj
        ai -= delta
        aj += delta
        if total > c:
            if ai > c:
                ai, aj = c, total - c
        elif aj < 0:
            aj, ai = 0.0, total
        if total > c:
            if aj > c:
                aj, ai = c, total - c
        elif ai < 0:
            ai, aj = 0.0, total
    return ai, aj


@njit(cache=True)
def _smo_loop(X, sigma, slots, slot_of, owner, last_used, y, c, epsilon, tol, max_iter,
              alpha, alpha_s, kb, history, record):
    n = y.shape[0]
    obj = 0.0
    it = 0
    gap = np.inf
    converged = False
    while True:
        i, si, j, sj, gap = _select_pair(y, kb, alpha, alpha_s, c, epsilon)
        if gap <= tol:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        # fetch j first so that fetching i cannot evict it when both miss
        sl_j = _column_slot(X, sigma, slots, slot_of, owner, last_used, j, 2 * it)
        sl_i = _column_slot(X, sigma, slots, slot_of, owner, last_used, i, 2 * it + 1)
        if slot_of[j] != sl_j:
            sl_j = _column_slot(X, sigma, slots, slot_of, owner, last_used, j, 2 * it + 1)
        ai = alpha[i] if si > 0 else alpha_s[i]
        aj = alpha[j] if sj > 0 else alpha_s[j]
        # stacked gradient: K beta + eps - y for alpha, -K beta + eps + y for alpha*
        Gi = si * kb[i] + epsilon - si * y[i]
        Gj = sj * kb[j] + epsilon - sj * y[j]
        Qii = slots[sl_i, i]
        Qjj = slots[sl_j, j]
        Qij = si * sj * slots[sl_i, j]
        new_i, new_j = _pair_update(ai, aj, Gi, Gj, Qii, Qjj, Qij, si, sj, c)
        da = new_i - ai
        db = new_j - aj
        if si > 0:
            alpha[i] = new_i
        else:
            alpha_s[i] = new_i
        if sj > 0:
            alpha[j] = new_j
        else:
            alpha_s[j] = new_j
        # beta moves by s * delta_a for each updated variable
        ci = si * da
        cj = sj * db
        for t in range(n):
            kb[t] += ci * slots[sl_i, t] + cj * slots[sl_j, t]
        if record:
            obj -= Gi * da + Gj * db + 0.5 * (Qii * da * da + Qjj * db * db) + Qij * da * db
            history[it] = obj
    return it, gap, converged


def smo_solve(cache: KernelCache, y, c, epsilon, tol=1e-3, max_iter=1_000_000,
              record_objective=True) -> SmoResult:
    """Maximal-violating-pair SMO on the stacked epsilon-SVR dual.

    ``objective`` holds the dual objective after every pair update
    (entry 0 is the starting point ``beta = 0``).
    """
    n = len(y)
    y = np.ascontiguousarray(y, dtype=float)
    alpha = np.zeros(n)
    alpha_s = np.zeros(n)
    kb = np.zeros(n)  # K @ beta
    history = np.zeros(max_iter + 1 if record_objective else 1)
    it, gap, converged = _smo_loop(cache.X, cache.sigma, cache.slots, cache.slot_of, cache.owner,
                                   cache.last_used, y, float(c), float(epsilon), float(tol),
                                   int(max_iter), alpha, alpha_s, kb, history,
                                   bool(record_objective))
    if not converged:
        warnings.warn(f"SMO stopped after {it} updates with KKT gap {gap:.3g} > tol {tol:g}",
                      ConvergenceWarning, stacklevel=2)
    beta = alpha - alpha_s
    b = _bias(y, kb, alpha, alpha_s, float(c), float(epsilon))
    objective = history[:it + 1].copy() if record_objective else np.empty(0)
    return SmoResult(beta, b, alpha, alpha_s, kb, int(it), bool(converged), float(gap), objective)


def _bias(y, kb, alpha, alpha_s, c, epsilon) -> float:
    """Mean over free variables, else midpoint of the feasible bias interval."""
    r0 = y - kb
    free_a = (alpha > 0) & (alpha < c)
    free_s = (alpha_s > 0) & (alpha_s < c)
    vals = np.concatenate([(r0 - epsilon)[free_a], (r0 + epsilon)[free_s]])
    if len(vals):
        return float(vals.mean())
    lower = np.concatenate([(r0 - epsilon)[alpha < c], (r0 + epsilon)[alpha_s > 0]])
    upper = np.concatenate([(r0 - epsilon)[alpha > 0], (r0 + epsilon)[alpha_s < c]])
    lo = lower.max() if len(lower) else -np.inf
    hi = upper.min() if len(upper) else np.inf
    if np.isfinite(lo) and np.isfinite(hi):
        return float(0.5 * (lo + hi))
    return float(lo if np.isfinite(lo) else hi)


@dataclass(frozen=True, eq=False)
class SvrModel:
    support: np.ndarray
    beta: np.ndarray
    b: float
    config: SvrConfig

    def to_dict(self) -> dict:
        return {"config": {"c": self.config.c, "epsilon": self.config.epsilon,
                           "sigma": self.config.sigma, "tol": self.config.tol,
                           "max_iter": self.config.max_iter},
                "support": self.support.tolist(), "beta": self.beta.tolist(), "b": self.b,
                "n_features": int(self.support.shape[1])}

    @classmethod
    def from_dict(cls, d) -> "SvrModel":
        support = np.asarray(d["support"], dtype=float).reshape(len(d["beta"]), d.get("n_features", 2))
        return cls(support, np.asarray(d["beta"], dtype=float), float(d["b"]),
                   SvrConfig(**d["config"]))


def svr_fit(config: SvrConfig, X, y, *, return_result=False):
    """Fit an epsilon-SVR; support points with ``beta == 0`` are dropped."""
    X, y = check_training(X, y, min_samples=2)
    cache = KernelCache(X, config.sigma)
    res = smo_solve(cache, y, config.c, config.epsilon, config.tol, config.max_iter)
    keep = res.beta != 0
    model = SvrModel(X[keep], res.beta[keep], res.b, config)
    return (model, res) if return_result else model


def svr_predict(model: SvrModel, queries, chunk: int = 4096) -> np.ndarray:
    """``f(q) = sum_i beta_i K(q, x_i) + b`` for every query row."""
    Q = check_points(queries)
    out = np.full(len(Q), model.b)
    if len(model.beta) == 0:
        return out
    for lo in range(0, len(Q), chunk):
        out[lo:lo + chunk] += rbf_matrix(model.config.sigma, Q[lo:lo + chunk], model.support) @ model.beta
    return out


def kkt_violations(model: SvrModel, X, y, tol: float | None = None) -> np.ndarray:
    """Indices of training points whose residual breaks the KKT conditions.

    ``beta`` for points absent from the model's support set is taken as 0.
    """
    X, y = check_training(X, y)
    cfg = model.config
    tol = cfg.tol if tol is None else tol
    eps, c = cfg.epsilon, cfg.c
    r = y - svr_predict(model, X)
    beta = np.zeros(len(X))
    if len(model.beta):
        lookup = {tuple(p): k for k, p in enumerate(model.support)}
        for i, p in enumerate(X):
            k = lookup.get(tuple(p))
            if k is not None:
                beta[i] = model.beta[k]
    zero = beta == 0
    at_up = beta >= c
    at_lo = beta <= -c
    free_pos = (beta > 0) & ~at_up
    free_neg = (beta < 0) & ~at_lo
    ok = np.ones(len(X), dtype=bool)
    ok[zero] = np.abs(r[zero]) <= eps + tol
    ok[free_pos] = np.abs(r[free_pos] - eps) <= tol
    ok[free_neg] = np.abs(r[free_neg] + eps) <= tol
    ok[at_up] = r[at_up] >= eps - tol
    ok[at_lo] = r[at_lo] <= -eps + tol
    return np.flatnonzero(~ok)


class GaussianSVR(RegressorMixin, BaseEstimator):
    """Epsilon-SVR with a Gaussian kernel, solved by SMO.

    Parameters
    ----------
    C : float, default=10.0
        Box constraint on the dual coefficients.
    epsilon : float, default=0.01
        Half-width of the insensitive tube, in target units.
    sigma : float, default=0.1
        Kernel width in input units.
    tol : float, default=1e-3
        Stop when the maximal KKT violation falls below this.
    max_iter : int, default=1_000_000
        Cap on SMO pair updates.
    """

    def __init__(self, C=10.0, epsilon=0.01, sigma=0.1, tol=1e-3, max_iter=1_000_000):
        self.C = C
        self.epsilon = epsilon
        self.sigma = sigma
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        config = SvrConfig(self.C, self.epsilon, self.sigma, self.tol, self.max_iter)
        self.model_, res = svr_fit(config, X, y, return_result=True)
        self.converged_ = res.converged
        self.n_iter_ = res.iterations
        self.dual_objective_ = res.objective[-1] if len(res.objective) else None
        self.n_features_in_ = self.model_.support.shape[1] if len(self.model_.beta) else np.shape(X)[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return svr_predict(self.model_, X)


def tune_svr(X_train, y_train, X_test, y_test, param_grid=None, **fixed):
    """Grid search scored by RMSE on a fixed held-out split.

    Returns the fitted ``GridSearchCV``; ``best_estimator_`` is refitted on
    train and test combined.
    """
    if param_grid is None:
        param_grid = {"C": [1.0, 10.0, 100.0], "epsilon": [0.005, 0.01, 0.02],
                      "sigma": [0.05, 0.1, 0.2]}
    X = np.vstack([X_train, X_test])
    y = np.concatenate([y_train, y_test])
    fold = np.r_[np.full(len(y_train), -1), np.zeros(len(y_test), dtype=int)]
    search = GridSearchCV(GaussianSVR(**fixed), param_grid, cv=PredefinedSplit(fold),
                          scoring="neg_root_mean_squared_error")
    return search.fit(X, y)
