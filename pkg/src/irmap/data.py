"""
Rate panels as point sets in the {maturity, time} plane.

A panel is a table of dates by tenors. Each non-empty cell becomes one
observation ``(maturity_months, day_index, rate)``. Models never see raw
coordinates: ``embed`` min-max scales both axes to [0, 1] and stretches the
time axis by an anisotropy factor, and all distances downstream are
Euclidean in that scaled plane.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from typing import Iterable, Sequence

import numpy as np

DEFAULT_TENORS = ("1W", "1M", "2M", "3M", "6M", "9M", "1Y", "2Y", "3Y", "4Y", "5Y", "7Y", "10Y")

_TENOR_RE = re.compile(r"^\s*(\d+)\s*([WMYwmy])\s*$")
_UNIT_MONTHS = {"W": 12.0 / 52.0, "M": 1.0, "Y": 12.0}


class PanelError(ValueError):
    """Raised for malformed panel files or inconsistent panel data."""


def tenor_to_months(label: str) -> float:
    """Convert a tenor label such as ``"1W"``, ``"6M"`` or ``"10Y"`` to months.

    Weeks are converted at 12/52 months per week.
    """
    m = _TENOR_RE.match(label)
    if m is None:
        raise PanelError(f"cannot parse tenor {label!r}")
    count = int(m.group(1))
    if count <= 0:
        raise PanelError(f"tenor count must be positive, got {label!r}")
    return count * _UNIT_MONTHS[m.group(2).upper()]


@dataclass(frozen=True)
class Tenor:
    label: str
    months: float

    def __post_init__(self):
        if not self.months > 0:
            raise PanelError(f"tenor {self.label!r} has non-positive maturity")

    @classmethod
    def parse(cls, label: str) -> "Tenor":
        return cls(label.strip().upper(), tenor_to_months(label))


@dataclass(frozen=True)
class Observation:
    maturity_months: float
    day_index: int
    rate: float


@dataclass(frozen=True)
class ScalingSpec:
    """Min-max box of the raw coordinates plus the time-axis stretch."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    anisotropy: float = 1.0

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ValueError("ScalingSpec needs x_max > x_min")
        if not self.y_max > self.y_min:
            raise ValueError("ScalingSpec needs y_max > y_min")
        if not self.anisotropy > 0:
            raise ValueError("anisotropy must be positive")

    @classmethod
    def from_points(cls, maturity, day, anisotropy: float = 1.0) -> "ScalingSpec":
        maturity = np.asarray(maturity, dtype=float)
        day = np.asarray(day, dtype=float)
        return cls(float(maturity.min()), float(maturity.max()),
                   float(day.min()), float(day.max()), float(anisotropy))

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "y_min": self.y_min,
                "y_max": self.y_max, "anisotropy": self.anisotropy}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingSpec":
        return cls(float(d["x_min"]), float(d["x_max"]), float(d["y_min"]),
                   float(d["y_max"]), float(d.get("anisotropy", 1.0)))


def embed(spec: ScalingSpec, maturity, day):
    """Map raw (maturity, day) coordinates to the scaled (u, v) plane.

    Accepts scalars or arrays. Points outside the box extrapolate linearly.
    """
    u = (np.asarray(maturity, dtype=float) - spec.x_min) / (spec.x_max - spec.x_min)
    v = spec.anisotropy * (np.asarray(day, dtype=float) - spec.y_min) / (spec.y_max - spec.y_min)
    if u.ndim == 0 and v.ndim == 0:
        return float(u), float(v)
    return u, v


def embed_observation(spec: ScalingSpec, obs: Observation) -> tuple[float, float]:
    return embed(spec, obs.maturity_months, obs.day_index)


def _readonly(a) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable panel of observations.

    Columns are stored as parallel read-only arrays; ``observations`` gives
    the record view. Observations are ordered by date, then by tenor.
    """

    tenors: tuple[Tenor, ...]
    dates: tuple[date, ...]
    maturity: np.ndarray
    day: np.ndarray
    rate: np.ndarray
    scaling: ScalingSpec
    origin: date = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "maturity", _readonly(np.asarray(self.maturity, dtype=float)))
        object.__setattr__(self, "day", _readonly(np.asarray(self.day, dtype=np.int64)))
        object.__setattr__(self, "rate", _readonly(np.asarray(self.rate, dtype=float)))
        if self.origin is None and self.dates:
            object.__setattr__(self, "origin", self.dates[0])
        if not (len(self.maturity) == len(self.day) == len(self.rate)):
            raise PanelError("column lengths differ")
        if not np.all(np.isfinite(self.rate)):
            raise PanelError("rates must be finite")

    def __len__(self) -> int:
        return len(self.rate)

    @property
    def observations(self) -> list[Observation]:
        return [Observation(float(m), int(d), float(r))
                for m, d, r in zip(self.maturity, self.day, self.rate)]

    @property
    def coords(self) -> np.ndarray:
        """Raw ``(maturity_months, day_index)`` pairs, shape (n, 2)."""
        return np.column_stack([self.maturity, self.day.astype(float)])

    def embedded(self) -> np.ndarray:
        """Scaled ``(u, v)`` pairs, shape (n, 2)."""
        u, v = embed(self.scaling, self.maturity, self.day)
        return np.column_stack([u, v])

    @property
    def day_indices(self) -> np.ndarray:
        """Day index of every date row, relative to ``origin``."""
        return np.array([(d - self.origin).days for d in self.dates], dtype=np.int64)

    def date_of(self, day_index: int) -> date:
        return self.origin + timedelta(days=int(day_index))

    def matrix(self) -> np.ndarray:
        """Dates x tenors rate matrix with NaN for missing cells."""
        out = np.full((len(self.dates), len(self.tenors)), np.nan)
        row = {int(d): i for i, d in enumerate(self.day_indices)}
        col = {m: j for j, m in enumerate(t.months for t in self.tenors)}
        for m, d, r in zip(self.maturity, self.day, self.rate):
            out[row[int(d)], col[float(m)]] = r
        return out

    def subset(self, mask, rescale: bool = True) -> "Dataset":
        """Observations selected by ``mask``; dates without any cell are dropped."""
        mask = np.asarray(mask)
        if mask.dtype != bool:
            sel = np.zeros(len(self), dtype=bool)
            sel[mask] = True
            mask = sel
        if not mask.any():
            raise PanelError("empty subset")
        day = self.day[mask]
        kept = set(int(d) for d in day)
        dates = tuple(d for d, di in zip(self.dates, self.day_indices) if int(di) in kept)
        scaling = self.scaling
        if rescale:
            scaling = _scaling_for(self.maturity[mask], day, self.scaling.anisotropy,
                                   fallback=self.scaling)
        return Dataset(self.tenors, dates, self.maturity[mask], day, self.rate[mask],
                       scaling, origin=self.origin)

    def with_anisotropy(self, anisotropy: float) -> "Dataset":
        return replace(self, scaling=replace(self.scaling, anisotropy=float(anisotropy)))


def _scaling_for(maturity, day, anisotropy, fallback=None) -> ScalingSpec:
    maturity = np.asarray(maturity, dtype=float)
    day = np.asarray(day, dtype=float)
    x_min, x_max = float(maturity.min()), float(maturity.max())
    y_min, y_max = float(day.min()), float(day.max())
    # degenerate axes (one tenor / one date) keep a unit-width box
    if x_max <= x_min:
        x_max = x_min + (fallback.x_max - fallback.x_min if fallback else 1.0)
    if y_max <= y_min:
        y_max = y_min + (fallback.y_max - fallback.y_min if fallback else 1.0)
    return ScalingSpec(x_min, x_max, y_min, y_max, float(anisotropy))


def from_matrix(dates: Sequence[date], tenors: Sequence[str | Tenor], values,
                anisotropy: float = 1.0) -> Dataset:
    """Build a Dataset from a dates x tenors array; NaN marks a missing cell."""
    tenors = tuple(t if isinstance(t, Tenor) else Tenor.parse(t) for t in tenors)
    dates = tuple(dates)
    values = np.asarray(values, dtype=float)
    if values.shape != (len(dates), len(tenors)):
        raise PanelError(f"matrix shape {values.shape} does not match "
                         f"{len(dates)} dates x {len(tenors)} tenors")
    if len(set(t.months for t in tenors)) != len(tenors):
        raise PanelError("duplicate tenor columns")
    for a, b in zip(dates, dates[1:]):
        if not b > a:
            raise PanelError(f"dates must be strictly ascending ({a} then {b})")
    if not dates:
        raise PanelError("panel has no dates")
    origin = dates[0]
    day_of_row = np.array([(d - origin).days for d in dates], dtype=np.int64)
    months = np.array([t.months for t in tenors])
    rows, cols = np.nonzero(~np.isnan(values))
    if len(rows) == 0:
        raise PanelError("panel has no valid cells")
    rate = values[rows, cols]
    if not np.all(np.isfinite(rate)):
        raise PanelError("non-finite rate in panel")
    maturity = months[cols]
    day = day_of_row[rows]
    return Dataset(tenors, dates, maturity, day, rate,
                   _scaling_for(maturity, day, anisotropy), origin=origin)


def load_panel(source, anisotropy: float = 1.0) -> Dataset:
    """Read a ``date,<tenor>,...`` CSV panel.

    ``source`` may be a path, a text stream or a byte stream.
    """
    if isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8")
    elif hasattr(source, "read"):
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
    else:
        with open(source, encoding="utf-8", newline="") as fh:
            text = fh.read()
    rows = list(csv.reader(io.StringIO(text.lstrip("﻿"))))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise PanelError("empty panel file")
    header = [c.strip() for c in rows[0]]
    if not header or header[0].lower() != "date" or len(header) < 2:
        raise PanelError("header must be 'date,<tenor>,<tenor>,...'")
    tenors = [Tenor.parse(h) for h in header[1:]]
    dates, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise PanelError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            dates.append(date.fromisoformat(row[0].strip()))
        except ValueError as exc:
            raise PanelError(f"line {lineno}: bad date {row[0]!r}") from exc
        vals = []
        for cell in row[1:]:
            cell = cell.strip()
            if not cell:
                vals.append(np.nan)
                continue
            try:
                v = float(cell)
            except ValueError as exc:
                raise PanelError(f"line {lineno}: malformed number {cell!r}") from exc
            if not math.isfinite(v):
                raise PanelError(f"line {lineno}: non-finite rate {cell!r}")
            vals.append(v)
        values.append(vals)
    if not dates:
        raise PanelError("panel has no data rows")
    return from_matrix(dates, tenors, np.array(values, dtype=float), anisotropy)


def dump_panel(dataset: Dataset, fh=None) -> str:
    """Write ``dataset`` in the panel CSV format; returns the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["date"] + [t.label for t in dataset.tenors])
    for d, row in zip(dataset.dates, dataset.matrix()):
        w.writerow([d.isoformat()] + ["" if np.isnan(v) else repr(float(v)) for v in row])
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    test: np.ndarray
    seed: int


def split_80_20(n: int, seed: int) -> SplitIndices:
    """Seeded uniform random split with ``round(0.8 n)`` training indices."""
    if n < 5:
        raise ValueError(f"need at least 5 items to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    # 0.8 n is never exactly x.5 for integer n, so rounding mode is moot
    n_train = int(round(0.8 * n))
    return SplitIndices(np.sort(perm[:n_train]), np.sort(perm[n_train:]), int(seed))


def moving_windows(dataset: Dataset, window_days: int, step_days: int) -> list[Dataset]:
    """Half-open day windows ``[k*step, k*step + window)`` that fit inside the panel.

    Offsets are relative to the first observed day. A window at least as long
    as the panel yields the whole panel. Each view gets its own scaling.
    """
    if window_days < 30:
        raise ValueError("window_days must be >= 30")
    if step_days < 1:
        raise ValueError("step_days must be >= 1")
    first = int(dataset.day.min())
    span = int(dataset.day.max()) - first + 1
    if window_days >= span:
        return [dataset.subset(np.ones(len(dataset), dtype=bool))]
    views = []
    for start in window_starts(span, window_days, step_days):
        lo = first + start
        mask = (dataset.day >= lo) & (dataset.day < lo + window_days)
        if mask.any():
            views.append(dataset.subset(mask))
    return views


def window_starts(span: int, window_days: int, step_days: int) -> list[int]:
    if window_days >= span:
        return [0]
    return list(range(0, span - window_days + 1, step_days))


@dataclass(frozen=True)
class NsFactors:
    beta0: float
    beta1: float
    beta2: float
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("Nelson-Siegel decay must be positive")


def ns_rate(factors: NsFactors, maturity_months):
    """Nelson-Siegel rate at maturity ``tau`` (months); vectorised over tau.

    The tau -> 0 limit is returned as beta0 + beta1 exactly.
    """
    tau = np.asarray(maturity_months, dtype=float)
    x = factors.lam * tau
    small = np.abs(x) < 1e-8
    xs = np.where(small, 1.0, x)
    # -expm1 keeps the loading accurate for small lam*tau
    load1 = np.where(small, 1.0 - 0.5 * x, -np.expm1(-xs) / xs)
    load2 = np.where(small, 0.5 * x, load1 - np.exp(-xs))
    out = factors.beta0 + factors.beta1 * load1 + factors.beta2 * load2
    return float(out) if out.ndim == 0 else out


def ar1_path(n: int, mean: float, phi: float, sd: float, rng, start: float | None = None) -> np.ndarray:
    """AR(1) path ``x_t = mean + phi (x_{t-1} - mean) + sd * e_t``."""
    out = np.empty(n)
    out[0] = mean if start is None else start
    shocks = rng.standard_normal(n)
    for t in range(1, n):
        out[t] = mean + phi * (out[t - 1] - mean) + sd * shocks[t]
    return out


def factor_paths(n_days: int, beta0=2.0, beta1=-1.5, beta2=1.0, lam=0.06,
                 level_phi=0.98, level_sd=0.0, slope_phi=0.98, slope_sd=0.0,
                 curv_phi=0.98, curv_sd=0.0, seed=0) -> list[NsFactors]:
    """Daily factor paths; each beta follows an AR(1) around its mean.

    With all ``*_sd`` zero the factors are constant.
    """
    rng = np.random.default_rng(seed)
    b0 = ar1_path(n_days, beta0, level_phi, level_sd, rng)
    b1 = ar1_path(n_days, beta1, slope_phi, slope_sd, rng)
    b2 = ar1_path(n_days, beta2, curv_phi, curv_sd, rng)
    return [NsFactors(float(a), float(b), float(c), float(lam)) for a, b, c in zip(b0, b1, b2)]


def synthesize_panel(factors: Sequence[NsFactors], tenors: Iterable[str | Tenor] = DEFAULT_TENORS,
                     noise_sd: float = 0.0, seed: int = 0, start: date = date(2005, 1, 3),
                     anisotropy: float = 1.0) -> Dataset:
    """Panel of Nelson-Siegel curves, one per consecutive calendar day, plus Gaussian noise."""
    tenors = [t if isinstance(t, Tenor) else Tenor.parse(t) for t in tenors]
    factors = list(factors)
    if len(factors) < 2 or len(tenors) < 2:
        raise ValueError("synthesize_panel needs at least 2 days and 2 tenors")
    if noise_sd < 0:
        raise ValueError("noise_sd must be non-negative")
    months = np.array([t.months for t in tenors])
    clean = np.array([ns_rate(f, months) for f in factors])
    noise = np.random.default_rng(seed).standard_normal(clean.shape) * noise_sd
    dates = [start + timedelta(days=i) for i in range(len(factors))]
    return from_matrix(dates, tenors, clean + noise, anisotropy)
