"""Surface maps, curve reconstruction and out-of-sample curve forecasts."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import timedelta

import numpy as np
from sklearn.base import clone

from .data import Dataset, Tenor, window_starts
from .surface import fit_surface, scaling_of

DEFAULT_HORIZON = 31


@dataclass(frozen=True, eq=False)
class SurfaceGrid:
    """Model values on a regular grid; ``values[i, j]`` is at ``(maturities[j], days[i])``."""

    maturities: np.ndarray
    days: np.ndarray
    values: np.ndarray
    tag: str = ""

    def __post_init__(self):
        if self.values.shape != (len(self.days), len(self.maturities)):
            raise ValueError("grid values do not match the axes")
        for axis in (self.maturities, self.days):
            if len(axis) > 1 and not np.all(np.diff(axis) > 0):
                raise ValueError("grid axes must be strictly increasing")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["maturity_months", "day_index", "rate"])
        for i, d in enumerate(self.days):
            for j, m in enumerate(self.maturities):
                w.writerow([repr(float(m)), repr(float(d)), repr(float(self.values[i, j]))])
        return buf.getvalue()

    def sidecar(self, config: dict | None = None) -> dict:
        return {"model": self.tag, "config": config or {},
                "maturity_axis": [float(m) for m in self.maturities],
                "day_axis": [float(d) for d in self.days],
                "shape": [len(self.days), len(self.maturities)]}


def grid_axis(lo: float, hi: float, n: int) -> np.ndarray:
    if n < 2:
        raise ValueError("grid resolution must be at least 2")
    return np.linspace(lo, hi, n)


def map_surface(model, maturities, days, tag: str = "") -> SurfaceGrid:
    """Evaluate ``model`` (raw-coordinate predictor) at every grid node."""
    maturities = np.asarray(maturities, dtype=float)
    days = np.asarray(days, dtype=float)
    if maturities.size == 0 or days.size == 0:
        raise ValueError("empty grid")
    M, D = np.meshgrid(maturities, days)
    values = np.asarray(model.predict(np.column_stack([M.ravel(), D.ravel()])), dtype=float)
    return SurfaceGrid(maturities, days, values.reshape(len(days), len(maturities)), tag)


def _tenors(tenors) -> list[Tenor]:
    return [t if isinstance(t, Tenor) else Tenor.parse(t) for t in tenors]


def reconstruct_curve(model, day_index: float, tenors) -> np.ndarray:
    """Model rates at each tenor on one date."""
    months = np.array([t.months for t in _tenors(tenors)])
    X = np.column_stack([months, np.full(len(months), float(day_index))])
    return np.asarray(model.predict(X), dtype=float)


@dataclass(frozen=True)
class ForecastSpec:
    target_day: int
    tenors: tuple
    horizon_days: int = DEFAULT_HORIZON

    @classmethod
    def ahead(cls, cutoff_day: int, tenors, horizon_days: int = DEFAULT_HORIZON) -> "ForecastSpec":
        if horizon_days < 1:
            raise ValueError("horizon_days must be a positive integer")
        return cls(int(cutoff_day) + int(horizon_days), tuple(tenors), int(horizon_days))


@dataclass(frozen=True, eq=False)
class ForecastResult:
    tenors: list[Tenor]
    target_day: int
    forecast: np.ndarray
    truth: np.ndarray | None = None
    abs_error: np.ndarray | None = None
    mae: float | None = None

    def rows(self, origin=None):
        for k, t in enumerate(self.tenors):
            row = {"tenor": t.label, "maturity_months": t.months, "day_index": self.target_day,
                   "forecast": float(self.forecast[k])}
            if origin is not None:
                row["date"] = (origin + timedelta(days=self.target_day)).isoformat()
            if self.truth is not None:
                tr = self.truth[k]
                row["truth"] = None if np.isnan(tr) else float(tr)
                row["abs_error"] = None if np.isnan(tr) else float(self.abs_error[k])
            yield row


def truth_curve(truth: Dataset, day_index: int, tenors) -> np.ndarray:
    """Observed rates at exactly ``day_index`` (NaN where missing)."""
    out = np.full(len(tenors), np.nan)
    on_day = truth.day == int(day_index)
    for k, t in enumerate(_tenors(tenors)):
        hit = on_day & (truth.maturity == t.months)
        if hit.any():
            out[k] = truth.rate[hit][0]
    return out


def forecast_curve(model, spec: ForecastSpec, cutoff_day: float | None = None,
                   truth: Dataset | None = None) -> ForecastResult:
    """Extrapolate the curve at ``spec.target_day``.

    ``cutoff_day`` defaults to the last day of the model's scaling box. With
    ``truth`` (sharing the model's day origin) per-tenor absolute errors and
    their mean are attached.
    """
    if cutoff_day is None:
        cutoff_day = scaling_of(model).y_max
    if not spec.target_day > cutoff_day:
        raise ValueError(f"target day {spec.target_day} is not beyond the training cutoff {cutoff_day}")
    tenors = _tenors(spec.tenors)
    result = ForecastResult(tenors, int(spec.target_day), reconstruct_curve(model, spec.target_day, tenors))
    if truth is None:
        return result
    return score_forecast(result, truth_curve(truth, spec.target_day, tenors))


def score_forecast(result: ForecastResult, truth) -> ForecastResult:
    """Attach per-tenor absolute errors against ``truth`` (NaN = not observed)."""
    tr = np.asarray(truth, dtype=float)
    err = np.abs(result.forecast - tr)
    ok = np.isfinite(err)
    mae = float(err[ok].mean()) if ok.any() else None
    return ForecastResult(result.tenors, result.target_day, result.forecast, tr, err, mae)


@dataclass(frozen=True, eq=False)
class WindowResult:
    start_day: int
    end_day: int  # exclusive
    last_train_day: int
    target_day: int
    n_train: int
    result: ForecastResult = field(repr=False)

    @property
    def mae(self) -> float | None:
        return self.result.mae

    @property
    def rmse(self) -> float | None:
        e = self.result.abs_error
        ok = np.isfinite(e)
        return float(np.sqrt(np.mean(e[ok] ** 2))) if ok.any() else None


def walk_forward(dataset: Dataset, estimator, window_days: int, step_days: int,
                 horizon_days: int = DEFAULT_HORIZON) -> list[WindowResult]:
    """Train on each moving window and forecast ``horizon_days`` past its end.

    Windows are the half-open day ranges of ``data.moving_windows``; each is
    refitted from a clone of ``estimator`` on its own scaling. The target
    day is ``window end - 1 + horizon``. Windows whose target date has no
    observation are skipped.
    """
    if horizon_days < 1:
        raise ValueError("horizon_days must be positive")
    if window_days < 30 or step_days < 1:
        raise ValueError("window_days must be >= 30 and step_days >= 1")
    first = int(dataset.day.min())
    span = int(dataset.day.max()) - first + 1
    if span < window_days + horizon_days:
        raise ValueError(f"panel spans {span} days, need window + horizon = {window_days + horizon_days}")
    tenors = list(dataset.tenors)
    out = []
    for start in window_starts(span, window_days, step_days):
        lo, hi = first + start, first + start + window_days
        target = hi - 1 + horizon_days
        if not np.any(dataset.day == target):
            continue
        mask = (dataset.day >= lo) & (dataset.day < hi)
        if not mask.any():
            continue
        view = dataset.subset(mask)
        last = int(view.day.max())
        # no observation used for training may reach the forecast date
        assert last < target, f"temporal leakage: training day {last} >= target {target}"
        model = fit_surface(clone(estimator), view)
        res = forecast_curve(model, ForecastSpec(target, tuple(tenors), horizon_days),
                             cutoff_day=last, truth=dataset)
        out.append(WindowResult(lo, hi, last, target, int(mask.sum()), res))
    return out
