"""
Command-line interface.

    irmap [--config RUN.json] [--seed N] [--out DIR] COMMAND ...

Commands write fixed file names into ``--out``. Exit codes: 0 success,
2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass, field, fields
from datetime import date

import jsonschema
import numpy as np

from ._validation import FitError
from .analytics import correlation_matrix, metrics, residual_nugget_check, stylized_facts
from .data import (DEFAULT_TENORS, PanelError, Tenor, dump_panel, factor_paths, load_panel,
                   split_80_20, synthesize_panel)
from .forecast import (ForecastSpec, forecast_curve, grid_axis, map_surface, reconstruct_curve,
                       score_forecast, truth_curve, walk_forward)
from .geostat import SHAPES, VariogramModel
from .idw import IdwConfig
from .surface import FAMILIES, dump_model, dumps, fit_surface, load_model, make_estimator, scaling_of
from .svr import SvrConfig

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_FIT = 0, 2, 3, 4

# factor dynamics of the default synthetic panel
DEFAULT_FACTORS = {"beta0": 2.0, "beta1": -1.5, "beta2": 1.0, "lam": 0.06,
                   "level_phi": 0.98, "level_sd": 0.02, "slope_phi": 0.98, "slope_sd": 0.01,
                   "curv_phi": 0.98, "curv_sd": 0.01}

RESIDUAL_REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "Residual report",
    "type": "object",
    "required": ["verdict", "nugget_ratio", "residual_variance", "threshold", "n_residuals",
                 "smallest_lag", "p_value", "variogram", "split_seed", "model"],
    "properties": {
        "verdict": {"enum": ["pure_nugget", "structured"]},
        "nugget_ratio": {"type": "number", "minimum": 0, "maximum": 1},
        "residual_variance": {"type": "number", "minimum": 0},
        "threshold": {"type": "number", "minimum": 0, "maximum": 1},
        "n_residuals": {"type": "integer", "minimum": 30},
        "smallest_lag": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "p_value": {"type": ["number", "null"], "exclusiveMinimum": 0, "maximum": 1},
        "variogram": {
            "oneOf": [
                {"type": "null"},
                {"type": "object", "required": ["shape", "nugget", "sill", "range"],
                 "properties": {"shape": {"enum": list(SHAPES)},
                                "nugget": {"type": "number", "minimum": 0},
                                "sill": {"type": "number", "minimum": 0},
                                "range": {"type": "number", "exclusiveMinimum": 0}}},
            ]
        },
        "split_seed": {"type": "integer"},
        "model": {"enum": sorted(FAMILIES)},
    },
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def config_error(msg):
    return CliError(EXIT_CONFIG, msg)


def data_error(msg):
    return CliError(EXIT_DATA, msg)


@dataclass
class RunConfig:
    """Contents of ``--config``; every key is optional."""

    model: str = "idw"
    params: dict = field(default_factory=dict)
    anisotropy: float = 1.0
    nx: int = 50
    ny: int = 50
    split_seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise config_error("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise config_error(f"unknown config keys {unknown}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self):
        if self.model not in FAMILIES:
            raise config_error(f"unknown model {self.model!r}; choose from {sorted(FAMILIES)}")
        if not isinstance(self.params, dict):
            raise config_error("params must be an object")
        for name in ("nx", "ny"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 2:
                raise config_error(f"{name} must be an integer >= 2")
        if not isinstance(self.split_seed, int):
            raise config_error("split_seed must be an integer")
        if not (isinstance(self.anisotropy, (int, float)) and self.anisotropy > 0):
            raise config_error("anisotropy must be positive")
        self.estimator()

    def estimator(self):
        try:
            est = make_estimator(self.model, **self.params)
            check_params(est)
        except (TypeError, ValueError) as exc:
            raise config_error(f"invalid {self.model} parameters: {exc}") from None
        return est


def check_params(est):
    """Reject bad hyperparameters before any data is read."""
    family = type(est).__name__
    if family == "IDWRegressor":
        IdwConfig(est.power, est.n_neighbors, est.tie_epsilon)
    elif family == "GaussianSVR":
        SvrConfig(est.C, est.epsilon, est.sigma, est.tol, est.max_iter)
    elif family == "SigmoidMLPRegressor":
        est._config()
    elif family == "OrdinaryKriging":
        if est.variogram_model not in (*SHAPES, "auto"):
            raise ValueError(f"unknown variogram model {est.variogram_model!r}")
        if est.variogram_parameters is not None:
            p = est.variogram_parameters
            shape = "spherical" if est.variogram_model == "auto" else est.variogram_model
            VariogramModel(shape, float(p["nugget"]), float(p["sill"]), float(p["range"]))
        if not (isinstance(est.n_bins, int) and est.n_bins >= 2):
            raise ValueError("n_bins must be an integer >= 2")


def _read_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except OSError as exc:
        raise config_error(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise config_error(f"config is not valid JSON: {exc}") from None
    return RunConfig.from_dict(d)


def _panel(path, anisotropy=1.0):
    try:
        return load_panel(path, anisotropy)
    except OSError as exc:
        raise data_error(f"cannot read panel: {exc}") from None
    except PanelError as exc:
        raise data_error(f"bad panel {path}: {exc}") from None


def _model(path):
    try:
        return load_model(path)
    except OSError as exc:
        raise data_error(f"cannot read model: {exc}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise data_error(f"bad model file {path}: {exc}") from None


class Outputs:
    """Resolves output names under ``--out`` and refuses to clobber inputs."""

    def __init__(self, out_dir, inputs):
        self.dir = out_dir
        self.inputs = {os.path.realpath(p) for p in inputs if p}

    def path(self, name):
        p = os.path.join(self.dir, name)
        if os.path.realpath(p) in self.inputs:
            raise config_error(f"output {p} would overwrite an input")
        return p

    def write(self, name, text):
        os.makedirs(self.dir, exist_ok=True)
        with open(self.path(name), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)

    def write_bytes(self, name, blob):
        os.makedirs(self.dir, exist_ok=True)
        with open(self.path(name), "wb") as fh:
            fh.write(blob)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
    return buf.getvalue()


def _tenor_list(text):
    try:
        return [Tenor.parse(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise config_error(str(exc)) from None


def heatmap_ppm(values) -> bytes:
    """Binary PPM of ``values[row, col]``; blue at the minimum, white at the midpoint, red at the maximum."""
    values = np.asarray(values, dtype=float)
    lo, hi = float(values.min()), float(values.max())
    t = np.full(values.shape, 0.5) if hi <= lo else (values - lo) / (hi - lo)
    rgb = np.empty(values.shape + (3,))
    low = t <= 0.5
    s = np.where(low, 2.0 * t, 2.0 * (1.0 - t))
    rgb[..., 0] = np.where(low, 255.0 * s, 255.0)
    rgb[..., 1] = 255.0 * s
    rgb[..., 2] = np.where(low, 255.0, 255.0 * s)
    pixels = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    h, w = values.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def cmd_synth(args, cfg, out):
    spec = dict(DEFAULT_FACTORS)
    if args.factors:
        try:
            with open(args.factors, encoding="utf-8") as fh:
                extra = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise config_error(f"cannot read factor spec: {exc}") from None
        if not isinstance(extra, dict) or set(extra) - set(DEFAULT_FACTORS):
            raise config_error(f"factor spec keys must be among {sorted(DEFAULT_FACTORS)}")
        spec.update(extra)
    if args.days < 2:
        raise config_error("days must be >= 2")
    if args.noise < 0:
        raise config_error("noise must be >= 0")
    try:
        start = date.fromisoformat(args.start)
        factors = factor_paths(args.days, seed=args.seed, **spec)
        panel = synthesize_panel(factors, _tenor_list(args.tenors), args.noise, seed=args.seed + 1,
                                 start=start, anisotropy=cfg.anisotropy)
    except (TypeError, ValueError) as exc:
        raise config_error(f"bad synthesis spec: {exc}") from None
    out.write("panel.csv", dump_panel(panel))
    return EXIT_OK


def cmd_fit(args, cfg, out):
    est = cfg.estimator()
    panel = _panel(args.panel, cfg.anisotropy)
    try:
        split = split_80_20(len(panel), cfg.split_seed)
    except ValueError as exc:
        raise data_error(str(exc)) from None
    try:
        model = fit_surface(est, panel, split.train, eval_index=split.test)
    except ValueError as exc:
        raise FitError(str(exc)) from None
    X, y = panel.coords, panel.rate
    report = {
        "model": cfg.model,
        "split_seed": cfg.split_seed,
        "n_train": int(len(split.train)),
        "n_test": int(len(split.test)),
        "train": metrics(y[split.train], model.predict(X[split.train])).to_dict(),
        "test": metrics(y[split.test], model.predict(X[split.test])).to_dict(),
    }
    if not all(np.isfinite(v) for part in ("train", "test") for v in report[part].values()):
        raise FitError("non-finite predictions")
    os.makedirs(out.dir, exist_ok=True)
    dump_model(model, out.path("model.json"), split_seed=cfg.split_seed,
               n_observations=len(panel), origin=panel.origin.isoformat())
    out.write("metrics.json", dumps(report))
    return EXIT_OK


def cmd_map(args, cfg, out):
    model, doc = _model(args.model)
    sc = scaling_of(model)
    nx = args.nx if args.nx is not None else cfg.nx
    ny = args.ny if args.ny is not None else cfg.ny
    if nx < 2 or ny < 2:
        raise config_error("grid resolution must be at least 2 per axis")
    grid = map_surface(model, grid_axis(sc.x_min, sc.x_max, nx), grid_axis(sc.y_min, sc.y_max, ny),
                       tag=doc["family"])
    out.write("grid.csv", grid.to_csv())
    out.write("grid.json", dumps(grid.sidecar({"params": doc["params"], "nx": nx, "ny": ny})))
    out.write_bytes("heatmap.ppm", heatmap_ppm(grid.values))
    return EXIT_OK


def _day_index(doc, when):
    origin = date.fromisoformat(doc.get("origin", "1970-01-01"))
    try:
        return (date.fromisoformat(when) - origin).days
    except ValueError:
        try:
            return int(when)
        except ValueError:
            raise config_error(f"--date must be YYYY-MM-DD or a day index, got {when!r}") from None


def cmd_reconstruct(args, cfg, out):
    model, doc = _model(args.model)
    sc = scaling_of(model)
    day = _day_index(doc, args.date)
    if not sc.y_min <= day <= sc.y_max:
        raise config_error(f"day {day} lies outside the training span [{sc.y_min:g}, {sc.y_max:g}]")
    tenors = _tenor_list(args.tenors)
    curve = reconstruct_curve(model, day, tenors)
    out.write("curve.csv", _csv(["tenor", "maturity_months", "day_index", "rate"],
                                ([t.label, t.months, day, float(r)] for t, r in zip(tenors, curve))))
    return EXIT_OK


def cmd_forecast(args, cfg, out):
    if args.horizon < 1:
        raise config_error("horizon must be a positive number of days")
    panel = _panel(args.panel, cfg.anisotropy)
    tenors = list(panel.tenors)
    if args.walk_forward:
        window, step = args.walk_forward
        if window < 30 or step < 1:
            raise config_error("walk-forward needs window >= 30 and step >= 1")
        try:
            results = walk_forward(panel, cfg.estimator(), window, step, args.horizon)
        except ValueError as exc:
            raise data_error(str(exc)) from None
        rows = [[panel.date_of(w.start_day).isoformat(), panel.date_of(w.end_day - 1).isoformat(),
                 panel.date_of(w.target_day).isoformat(), w.start_day, w.end_day, w.last_train_day,
                 w.target_day, w.n_train, w.mae, w.rmse] for w in results]
        out.write("walk_forward.csv", _csv(
            ["window_start", "window_last", "target_date", "start_day", "end_day",
             "last_train_day", "target_day", "n_train", "mae", "rmse"], rows))
        return EXIT_OK
    if args.model:
        model, doc = _model(args.model)
        origin = date.fromisoformat(doc.get("origin", panel.origin.isoformat()))
    else:
        model, origin = fit_surface(cfg.estimator(), panel), panel.origin
    shift = (panel.origin - origin).days
    cutoff = int(scaling_of(model).y_max)
    result = forecast_curve(model, ForecastSpec.ahead(cutoff, tenors, args.horizon))
    target_date = date.fromordinal(origin.toordinal() + result.target_day)
    if args.truth:
        truth = _panel(args.truth, cfg.anisotropy)
        result = score_forecast(result, truth_curve(truth, (target_date - truth.origin).days, tenors))
    elif shift == 0 and int(panel.day.max()) >= result.target_day:
        result = score_forecast(result, truth_curve(panel, result.target_day, tenors))
    header = ["tenor", "maturity_months", "date", "day_index", "forecast", "truth", "abs_error"]
    rows = [[r["tenor"], r["maturity_months"], r["date"], r["day_index"], r["forecast"],
             r.get("truth"), r.get("abs_error")] for r in result.rows(origin)]
    out.write("forecast.csv", _csv(header, rows))
    out.write("forecast.json", dumps({"target_date": target_date.isoformat(),
                                      "target_day": result.target_day, "cutoff_day": cutoff,
                                      "horizon_days": args.horizon, "mae": result.mae}))
    return EXIT_OK


def cmd_diagnose(args, cfg, out):
    model, doc = _model(args.model)
    sc = scaling_of(model)
    panel = _panel(args.panel, sc.anisotropy)
    mismatch = [k for k, v in sc.to_dict().items()
                if not np.isclose(panel.scaling.to_dict()[k], v, rtol=1e-12, atol=1e-12)]
    if mismatch:
        raise data_error(f"panel scaling differs from the model's in {mismatch}")
    seed = int(doc.get("split_seed", cfg.split_seed))
    if doc.get("n_observations", len(panel)) != len(panel):
        raise data_error("panel does not have the observation count the model was fitted on")
    train = split_80_20(len(panel), seed).train
    X = panel.coords[train]
    residuals = panel.rate[train] - model.predict(X)
    try:
        report = residual_nugget_check(model.named_steps["embed"].transform(X), residuals, seed=seed)
        facts = stylized_facts(panel)
    except ValueError as exc:
        raise data_error(str(exc)) from None
    body = report.to_dict()
    body.update(split_seed=seed, model=doc["family"])
    jsonschema.validate(body, RESIDUAL_REPORT_SCHEMA)
    out.write("residual_report.json", dumps(body))
    emp_rows = [] if report.empirical is None else report.empirical.to_rows()
    out.write("variogram.csv", _csv(["h", "gamma_hat", "pairs"],
                                    ([float(h), float(g), int(n)] for h, g, n in emp_rows)))
    out.write("stylized_facts.json", dumps(facts))
    labels, C = correlation_matrix(panel)
    out.write("correlation.csv", _csv(["tenor", *labels],
                                      ([lab, *(None if np.isnan(c) else float(c) for c in row)]
                                       for lab, row in zip(labels, C))))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="run configuration JSON")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="split seed (and synthesis seed); overrides the config")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default .)")

    parser = argparse.ArgumentParser(prog="irmap", parents=[common],
                                     description="Interest-rate surface modelling.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic Nelson-Siegel panel")
    p.add_argument("--factors", help="JSON object overriding the factor dynamics")
    p.add_argument("--tenors", default=",".join(DEFAULT_TENORS))
    p.add_argument("--days", type=int, default=100)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--start", default="2005-01-03")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", parents=[common], help="fit a model on a seeded 80%% split")
    p.add_argument("panel")
    p.add_argument("--model", dest="family", choices=sorted(FAMILIES))
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("map", parents=[common], help="evaluate a model on a grid")
    p.add_argument("model")
    p.add_argument("--nx", type=int)
    p.add_argument("--ny", type=int)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("reconstruct", parents=[common], help="model curve on one date")
    p.add_argument("model")
    p.add_argument("--date", required=True, help="YYYY-MM-DD or day index")
    p.add_argument("--tenors", default=",".join(DEFAULT_TENORS))
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("forecast", parents=[common], help="forecast the curve past the data")
    p.add_argument("panel")
    p.add_argument("--model", help="fitted model JSON; otherwise fit the configured model")
    p.add_argument("--horizon", type=int, default=31)
    p.add_argument("--truth", help="panel holding the realised curve")
    p.add_argument("--walk-forward", nargs=2, type=int, metavar=("WINDOW", "STEP"))
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("diagnose", parents=[common], help="residual variography and panel facts")
    p.add_argument("model")
    p.add_argument("panel")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    args.config = getattr(args, "config", None)
    args.out = getattr(args, "out", ".")
    try:
        cfg = _read_config(args.config)
        if getattr(args, "seed", None) is not None:
            cfg.split_seed = args.seed
        else:
            args.seed = cfg.split_seed
        if getattr(args, "family", None) and args.family != cfg.model:
            cfg.model, cfg.params = args.family, {}
            cfg.validate()
        inputs = [args.config, getattr(args, "panel", None), getattr(args, "model", None),
                  getattr(args, "truth", None), getattr(args, "factors", None)]
        return args.func(args, cfg, Outputs(args.out, inputs))
    except CliError as exc:
        print(f"irmap {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except FitError as exc:
        print(f"irmap {args.command}: fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except np.linalg.LinAlgError as exc:
        print(f"irmap {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
