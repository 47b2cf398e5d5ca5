import csv
import json
from datetime import date, timedelta

import jsonschema
import numpy as np
import pytest

from irmap.cli import (EXIT_CONFIG, EXIT_DATA, EXIT_OK, RESIDUAL_REPORT_SCHEMA, heatmap_ppm, main)
from irmap.data import (DEFAULT_TENORS, NsFactors, dump_panel, factor_paths, from_matrix, load_panel,
                        ns_rate, split_80_20)


def _run(*argv):
    return main([str(a) for a in argv])


def _config(tmp_path, name, **d):
    path = tmp_path / name
    path.write_text(json.dumps(d))
    return path


def _pixels(blob):
    header, w, h = blob.split(b"\n")[0], *map(int, blob.split(b"\n")[1].split())
    assert header == b"P6"
    return np.frombuffer(blob.split(b"\n", 3)[3], dtype=np.uint8).reshape(h, w, 3)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert _run("synth", "--days", 60, "--seed", 3, "--out", root) == EXIT_OK
    assert _run("fit", root / "panel.csv", "--model", "idw", "--out", root) == EXIT_OK
    return root


class TestSynth:
    def test_round_trip(self, workspace):
        panel = load_panel(workspace / "panel.csv")
        assert len(panel.dates) == 60 and [t.label for t in panel.tenors] == list(DEFAULT_TENORS)

    def test_byte_identical(self, tmp_path, workspace):
        assert _run("synth", "--days", 60, "--seed", 3, "--out", tmp_path) == EXIT_OK
        assert (tmp_path / "panel.csv").read_bytes() == (workspace / "panel.csv").read_bytes()

    def test_noise_free_matches_formula(self, tmp_path):
        spec = _config(tmp_path, "f.json", level_sd=0.0, slope_sd=0.0, curv_sd=0.0)
        assert _run("synth", "--days", 5, "--noise", 0, "--factors", spec, "--out", tmp_path) == EXIT_OK
        panel = load_panel(tmp_path / "panel.csv")
        f = factor_paths(1)[0]
        assert np.allclose(panel.rate, ns_rate(NsFactors(f.beta0, f.beta1, f.beta2, f.lam), panel.maturity),
                           rtol=0, atol=1e-12)

    def test_bad_factor_key(self, tmp_path):
        spec = _config(tmp_path, "f.json", volatility=1.0)
        assert _run("synth", "--factors", spec, "--out", tmp_path) == EXIT_CONFIG


class TestFit:
    def test_outputs(self, workspace):
        doc = json.loads((workspace / "model.json").read_text())
        report = json.loads((workspace / "metrics.json").read_text())
        assert doc["family"] == "idw" and doc["n_observations"] == 780
        assert report["n_train"] == 624 and report["n_test"] == 156
        assert report["train"]["rmse"] <= 1e-10

    def test_missing_panel(self, tmp_path):
        assert _run("fit", tmp_path / "nope.csv", "--out", tmp_path) == EXIT_DATA

    def test_invalid_svr_params(self, tmp_path, workspace):
        cfg = _config(tmp_path, "run.json", model="svr", params={"C": 0})
        assert _run("--config", cfg, "fit", workspace / "panel.csv", "--out", tmp_path) == EXIT_CONFIG

    def test_unknown_config_key(self, tmp_path, workspace):
        cfg = _config(tmp_path, "run.json", modle="svr")
        assert _run("--config", cfg, "fit", workspace / "panel.csv", "--out", tmp_path) == EXIT_CONFIG

    def test_refuses_to_overwrite_input(self, tmp_path, workspace):
        panel = tmp_path / "metrics.json"
        panel.write_bytes((workspace / "panel.csv").read_bytes())
        assert _run("fit", panel, "--out", tmp_path) == EXIT_CONFIG


class TestMap:
    def test_grid_files(self, tmp_path, workspace):
        assert _run("map", workspace / "model.json", "--nx", 7, "--ny", 5, "--out", tmp_path) == EXIT_OK
        rows = list(csv.reader((tmp_path / "grid.csv").open()))
        assert len(rows) == 7 * 5 + 1
        side = json.loads((tmp_path / "grid.json").read_text())
        assert side["shape"] == [5, 7]
        assert _pixels((tmp_path / "heatmap.ppm").read_bytes()).shape == (5, 7, 3)

    def test_bad_resolution(self, tmp_path, workspace):
        assert _run("map", workspace / "model.json", "--nx", 1, "--out", tmp_path) == EXIT_CONFIG


class TestHeatmap:
    def test_colour_ramp(self):
        px = _pixels(heatmap_ppm(np.array([[0.0, 1.0], [1.0, 2.0]])))
        assert px[0, 0].tolist() == [0, 0, 255]
        assert px[0, 1].tolist() == [255, 255, 255] and px[1, 0].tolist() == [255, 255, 255]
        assert px[1, 1].tolist() == [255, 0, 0]

    def test_constant_grid_is_white(self):
        assert np.all(_pixels(heatmap_ppm(np.full((3, 4), 2.5))) == 255)


class TestReconstruct:
    def test_curve(self, tmp_path, workspace):
        assert _run("reconstruct", workspace / "model.json", "--date", "2005-01-13",
                    "--out", tmp_path) == EXIT_OK
        rows = list(csv.DictReader((tmp_path / "curve.csv").open()))
        panel = load_panel(workspace / "panel.csv")
        got = np.array([float(r["rate"]) for r in rows])
        on_day = np.flatnonzero(panel.day == 10)
        # IDW is exact only at the cells of the training split
        fitted = np.isin(on_day, split_80_20(len(panel), 0).train)
        assert fitted.any()
        assert np.allclose(got[fitted], panel.rate[on_day[fitted]], rtol=0, atol=1e-10)

    def test_date_outside_span(self, tmp_path, workspace):
        assert _run("reconstruct", workspace / "model.json", "--date", "2010-01-01",
                    "--out", tmp_path) == EXIT_CONFIG


class TestDiagnose:
    def test_idw_residuals_are_nugget(self, tmp_path, workspace):
        assert _run("diagnose", workspace / "model.json", workspace / "panel.csv", "--out", tmp_path) == EXIT_OK
        report = json.loads((tmp_path / "residual_report.json").read_text())
        jsonschema.validate(report, RESIDUAL_REPORT_SCHEMA)
        assert report["verdict"] == "pure_nugget"
        for name in ("variogram.csv", "stylized_facts.json", "correlation.csv"):
            assert (tmp_path / name).exists()

    def test_underfit_model_is_structured(self, tmp_path, workspace):
        # an all-inside-the-tube SVR is a constant, leaving the whole curve shape in the residuals
        cfg = _config(tmp_path, "run.json", model="svr", params={"C": 0.01, "epsilon": 5.0})
        assert _run("--config", cfg, "fit", workspace / "panel.csv", "--out", tmp_path) == EXIT_OK
        assert _run("diagnose", tmp_path / "model.json", workspace / "panel.csv", "--out", tmp_path) == EXIT_OK
        assert json.loads((tmp_path / "residual_report.json").read_text())["verdict"] == "structured"

    def test_mismatched_panel(self, tmp_path, workspace):
        assert _run("synth", "--days", 40, "--out", tmp_path) == EXIT_OK
        assert _run("diagnose", workspace / "model.json", tmp_path / "panel.csv",
                    "--out", tmp_path) == EXIT_DATA


class TestForecast:
    def test_zero_horizon(self, tmp_path, workspace):
        assert _run("forecast", workspace / "panel.csv", "--horizon", 0, "--out", tmp_path) == EXIT_CONFIG

    def test_walk_forward_rows(self, tmp_path):
        assert _run("synth", "--days", 120, "--out", tmp_path) == EXIT_OK
        assert _run("forecast", tmp_path / "panel.csv", "--horizon", 30, "--walk-forward", 60, 30,
                    "--out", tmp_path) == EXIT_OK
        rows = list(csv.DictReader((tmp_path / "walk_forward.csv").open()))
        assert [int(r["target_day"]) for r in rows] == [89, 119]

    def test_constant_panel_kriging(self, tmp_path):
        dates = [date(2005, 1, 3) + timedelta(days=i) for i in range(40)]
        values = np.full((40, 13), 2.5) + 1e-3 * np.random.default_rng(0).normal(size=(40, 13))
        (tmp_path / "panel.csv").write_text(dump_panel(from_matrix(dates, DEFAULT_TENORS, values)))
        cfg = _config(tmp_path, "run.json", model="kriging")
        assert _run("--config", cfg, "forecast", tmp_path / "panel.csv", "--out", tmp_path) == EXIT_OK
        rows = list(csv.DictReader((tmp_path / "forecast.csv").open()))
        assert np.allclose([float(r["forecast"]) for r in rows], 2.5, rtol=0, atol=0.01)

    def test_from_saved_model(self, tmp_path, workspace):
        assert _run("forecast", workspace / "panel.csv", "--model", workspace / "model.json",
                    "--out", tmp_path) == EXIT_OK
        assert json.loads((tmp_path / "forecast.json").read_text())["target_date"] == "2005-04-03"


def test_unknown_command():
    assert _run("frobnicate") == EXIT_CONFIG
