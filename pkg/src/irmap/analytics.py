"""Error metrics, residual variography, curve factors and panel diagnostics."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np
from scipy.spatial import cKDTree

from .data import Dataset, tenor_to_months
from .geostat import STANDARD_SHAPES, EmpiricalVariogram, VariogramModel, empirical_variogram, fit_best_variogram


@dataclass(frozen=True)
class Metrics:
    rmse: float
    mae: float
    bias: float

    def to_dict(self):
        return asdict(self)


def metrics(observed, predicted) -> Metrics:
    """RMSE, MAE and bias (mean of predicted - observed)."""
    obs = np.asarray(observed, dtype=float).ravel()
    pred = np.asarray(predicted, dtype=float).ravel()
    if obs.size == 0:
        raise ValueError("metrics of an empty sample")
    if obs.shape != pred.shape:
        raise ValueError("observed and predicted differ in length")
    err = pred - obs
    return Metrics(float(np.sqrt(np.mean(err ** 2))), float(np.mean(np.abs(err))), float(np.mean(err)))


@dataclass(frozen=True)
class ResidualReport:
    residuals: np.ndarray  # rows of (u, v, residual)
    nugget_ratio: float
    residual_variance: float
    verdict: str
    variogram: VariogramModel | None
    smallest_lag: float | None
    threshold: float
    p_value: float | None = None
    empirical: EmpiricalVariogram | None = None

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "nugget_ratio": self.nugget_ratio,
            "residual_variance": self.residual_variance,
            "threshold": self.threshold,
            "n_residuals": int(len(self.residuals)),
            "smallest_lag": self.smallest_lag,
            "p_value": self.p_value,
            "variogram": None if self.variogram is None else self.variogram.to_dict(),
        }


def short_range_p_value(X, r, reach: float, n_permutations: int = 999, seed: int = 0) -> float:
    """Permutation p-value for "pairs closer than ``reach`` are more alike than chance".

    The statistic is the mean semivariance of pairs within ``reach``;
    shuffling residuals over locations gives its no-correlation distribution.
    """
    I, J = cKDTree(X).query_pairs(reach, output_type="ndarray").T if len(X) > 1 else ([], [])
    if len(I) == 0:
        return 1.0
    observed = np.mean((r[I] - r[J]) ** 2)
    rng = np.random.default_rng(seed)
    below = 0
    for _ in range(n_permutations):
        rp = r[rng.permutation(len(r))]
        below += np.mean((rp[I] - rp[J]) ** 2) <= observed
    return float((1 + below) / (1 + n_permutations))


def residual_nugget_check(X, residuals, threshold: float = 0.9, alpha: float | None = 1e-3,
                          n_permutations: int = 999, n_bins: int = 15,
                          max_lag: float | None = None, zero_tol: float = 1e-12,
                          max_points: int = 3000, seed: int = 0) -> ResidualReport:
    """Is there spatial structure left in the residuals?

    The best of the three standard variogram shapes is fitted to the
    residual variogram. The fit reads as pure nugget when the nugget makes up
    at least ``threshold`` of the total sill, or when the fitted range is
    shorter than the first lag centre. Otherwise the verdict is
    ``structured``, provided (when ``alpha`` is set) that residuals closer
    than the fitted range are significantly more alike than under random
    relabelling. ``alpha=None`` skips that test.

    Residuals all within ``zero_tol`` of zero count as pure nugget with
    ratio 1. More than ``max_points`` residuals are subsampled (seeded).
    """
    X = np.asarray(X, dtype=float)
    r = np.asarray(residuals, dtype=float).ravel()
    if len(r) < 30:
        raise ValueError(f"need at least 30 residuals, got {len(r)}")
    if not 0 <= threshold <= 1:
        raise ValueError("threshold must lie in [0, 1]")
    rows = np.column_stack([X, r])
    if np.max(np.abs(r)) <= zero_tol:
        return ResidualReport(rows, 1.0, float(np.var(r)), "pure_nugget", None, None, threshold)
    Xs, rs = X, r
    if len(r) > max_points:
        keep = np.sort(np.random.default_rng(seed).choice(len(r), max_points, replace=False))
        Xs, rs = X[keep], r[keep]
    emp = empirical_variogram(Xs, rs, n_bins, max_lag)
    model, _ = fit_best_variogram(emp, STANDARD_SHAPES)
    smallest = float(emp.h[emp.usable()][0])
    ratio = model.nugget_ratio
    looks_pure = ratio >= threshold or model.range < smallest
    p = None
    if not looks_pure and alpha is not None:
        p = short_range_p_value(Xs, rs, min(model.range, emp.max_lag), n_permutations, seed)
    verdict = "pure_nugget" if looks_pure or (p is not None and p > alpha) else "structured"
    return ResidualReport(rows, float(ratio), float(np.var(r)), verdict, model, smallest,
                          threshold, p, emp)


@dataclass(frozen=True)
class CurveFactors:
    level: float
    slope: float
    curvature: float


def _by_months(curve: Mapping[str, float]) -> dict[float, float]:
    return {tenor_to_months(k): float(v) for k, v in curve.items()}


def curve_factors(curve: Mapping[str, float]) -> CurveFactors:
    """Level (10Y), slope (10Y - 3M) and curvature (2*2Y - 3M - 10Y) of one curve.

    ``curve`` maps tenor labels to rates.
    """
    by_m = _by_months(curve)
    missing = [lab for lab, m in (("3M", 3.0), ("2Y", 24.0), ("10Y", 120.0)) if m not in by_m]
    if missing:
        raise KeyError(f"curve lacks required tenors {missing}")
    r3m, r2y, r10y = by_m[3.0], by_m[24.0], by_m[120.0]
    return CurveFactors(r10y, r10y - r3m, 2.0 * r2y - r3m - r10y)


def factor_series(dataset: Dataset) -> list[CurveFactors | None]:
    """Curve factors for every date; None where a required tenor is missing."""
    labels = [t.label for t in dataset.tenors]
    out = []
    for row in dataset.matrix():
        curve = {lab: v for lab, v in zip(labels, row) if np.isfinite(v)}
        try:
            out.append(curve_factors(curve))
        except KeyError:
            out.append(None)
    return out


def _column(dataset: Dataset, months: float):
    for j, t in enumerate(dataset.tenors):
        if t.months == months:
            return j
    return None


def stylized_facts(dataset: Dataset, tol: float = 1e-12) -> dict:
    """Shape of the average curve, short-end volatility and curve inversions.

    ``average_curve_increasing`` and ``average_curve_concave`` compare the
    time-averaged rates and their slopes per month across tenors; both hold
    weakly, so a flat curve satisfies them and is flagged by
    ``average_curve_flat``.
    ``short_end_more_volatile`` compares the standard deviation of daily
    changes at 1M and 10Y. ``inversions`` counts dates with 1W above 1M.
    """
    if len(dataset.dates) < 30:
        raise ValueError(f"need at least 30 dates, got {len(dataset.dates)}")
    M = dataset.matrix()
    months = np.array([t.months for t in dataset.tenors])
    with np.errstate(all="ignore"):
        avg = np.nanmean(M, axis=0)
    diffs = np.diff(avg)
    slopes = diffs / np.diff(months)
    scale = max(1.0, float(np.nanmax(np.abs(avg))))
    increasing = bool(np.all(diffs >= -tol * scale))
    concave = bool(np.all(np.diff(slopes) <= tol * scale))
    flat = bool(np.all(np.abs(diffs) <= tol * scale))

    changes = np.diff(M, axis=0)
    sd = []
    for col in changes.T:
        col = col[np.isfinite(col)]
        sd.append(float(np.std(col, ddof=1)) if len(col) > 1 else float("nan"))
    j1m, j10y, j1w = _column(dataset, 1.0), _column(dataset, 120.0), _column(dataset, 12.0 / 52.0)
    short_vol = None
    if j1m is not None and j10y is not None:
        # relative margin absorbs rounding when the two series move in lockstep
        short_vol = bool(sd[j1m] > sd[j10y] * (1.0 + 1e-9))
    inversions = None
    if j1w is not None and j1m is not None:
        both = np.isfinite(M[:, j1w]) & np.isfinite(M[:, j1m])
        inversions = int(np.sum(M[both, j1w] > M[both, j1m]))
    return {
        "n_dates": len(dataset.dates),
        "tenors": [t.label for t in dataset.tenors],
        "average_curve": [None if not np.isfinite(v) else float(v) for v in avg],
        "average_curve_increasing": increasing,
        "average_curve_concave": concave,
        "average_curve_flat": flat,
        "change_sd": [None if not np.isfinite(v) else v for v in sd],
        "short_end_more_volatile": short_vol,
        "inversions": inversions,
    }


def correlation_matrix(dataset: Dataset) -> tuple[list[str], np.ndarray]:
    """Pearson correlations between tenor level series (pairwise complete).

    Entries involving a constant series are NaN.
    """
    if len(dataset.dates) < 3:
        raise ValueError("need at least 3 dates")
    M = dataset.matrix()
    k = M.shape[1]
    C = np.full((k, k), np.nan)
    for a in range(k):
        for b in range(a, k):
            ok = np.isfinite(M[:, a]) & np.isfinite(M[:, b])
            if ok.sum() < 3:
                continue
            xa, xb = M[ok, a], M[ok, b]
            if np.all(xa == xa[0]) or np.all(xb == xb[0]):
                continue
            x = xa - xa.mean()
            y = xb - xb.mean()
            den = np.sqrt(np.dot(x, x) * np.dot(y, y))
            C[a, b] = C[b, a] = 1.0 if a == b else float(np.clip(np.dot(x, y) / den, -1.0, 1.0))
    return [t.label for t in dataset.tenors], C
