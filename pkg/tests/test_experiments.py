import csv
import json
import subprocess
import sys

import numpy as np
import pytest

import savetx as sx
from savetx.errors import ConfigError, IoError
from savetx.tables import emit_csv

TINY_MC = {"periods": 1500, "slots": 8000, "warmup_periods": 50,
           "warmup_slots": 100, "replications": 2, "streams": 64}
FAST_SOLVER = {"grid_points": 5, "gamma_hi": 3.0, "golden_tol": 0.25}


class TestValidateConfig:
    def test_fig3_defaults(self):
        cfg = sx.validate_config({"experiment": "fig3"})
        assert cfg.delta == 1e-3
        assert cfg.b_max_units == 1
        assert cfg.common == {"kind": "constant", "value": 32.0}
        assert cfg.private["states"] == [0.1, 16.0]
        assert cfg.p_s_grid == [0.0, 0.25, 0.5, 0.75, 1.0]
        model = cfg.build_model(0.5)
        assert model.eh.states == (1e-3,)

    def test_large_battery_keyword(self):
        cfg = sx.validate_config({"experiment": "fig4"})
        assert cfg.b_max_units == 10_000

    def test_p_s_out_of_range(self):
        with pytest.raises(ConfigError, match="p_s out of"):
            sx.validate_config({"experiment": "fig3",
                                "p_s_grid": [0.0, 1.5]})

    def test_negative_seed(self):
        with pytest.raises(ConfigError, match="seed"):
            sx.validate_config({"experiment": "fig3", "seed": -1})

    def test_unknown_top_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            sx.validate_config({"experiment": "fig3", "bogus": 1})

    def test_unknown_nested_key(self):
        with pytest.raises(ConfigError, match="solver"):
            sx.validate_config({"experiment": "fig3",
                                "solver": {"nope": 1}})

    def test_bad_gain_kind(self):
        with pytest.raises(ConfigError, match="private.kind"):
            sx.validate_config({"experiment": "fig3",
                                "private": {"kind": "weird"}})

    def test_bad_json_text(self):
        with pytest.raises(ConfigError, match="JSON"):
            sx.validate_config("{not json")

    def test_json_text_accepted(self):
        cfg = sx.validate_config('{"experiment": "fig4", "seed": 7}')
        assert cfg.seed == 7

    def test_unsorted_grid(self):
        with pytest.raises(ConfigError, match="sorted"):
            sx.validate_config({"experiment": "fig4",
                                "gamma_grid": [2.0, 1.0]})

    def test_bad_log_base(self):
        with pytest.raises(ConfigError, match="log_base"):
            sx.validate_config({"experiment": "fig4", "log_base": 10})

    def test_bad_preset(self):
        with pytest.raises(ConfigError, match="eh_models"):
            sx.validate_config({"experiment": "fig7",
                                "eh_models": ["a", "z"]})


class TestEmitCsv:
    def test_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        emit_csv([], ("a", "b"), path)
        assert path.read_bytes() == b"a,b\n"

    def test_one_row(self, tmp_path):
        path = tmp_path / "one.csv"
        emit_csv([(0.5, "x", 1.0 / 3.0)], ("p", "s", "v"), path)
        lines = path.read_text().splitlines()
        assert lines == ["p,s,v", "0.5,x,0.333333333333"]

    def test_round_trip_12_digits(self, tmp_path):
        rng = np.random.default_rng(0)
        vals = rng.uniform(1e-7, 1e7, 50).tolist()
        path = tmp_path / "rt.csv"
        emit_csv([(v,) for v in vals], ("v",), path)
        with open(path, newline="") as fh:
            back = [float(r["v"]) for r in csv.DictReader(fh)]
        for a, b in zip(vals, back):
            assert b == pytest.approx(a, rel=1e-11)

    def test_dict_rows(self, tmp_path):
        path = tmp_path / "d.csv"
        emit_csv([{"a": 1, "b": 2.5}], ("a", "b"), path)
        assert path.read_text().splitlines()[1] == "1,2.5"

    def test_io_error(self):
        with pytest.raises(IoError):
            emit_csv([], ("a",), "/nonexistent-dir/x.csv")


class TestRunExperiment:
    def test_fig3_outputs(self, tmp_path):
        cfg = sx.validate_config({
            "experiment": "fig3", "p_s_grid": [0.0, 1.0], "mc": TINY_MC})
        res = sx.run_experiment(cfg, tmp_path)
        with open(res["csv"], newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6
        schemes = {r["scheme"] for r in rows}
        assert schemes == {"opportunistic", "best_effort", "conventional"}
        for p_s in ("0", "1"):
            by = {r["scheme"]: float(r["throughput"]) for r in rows
                  if r["p_s"] == p_s}
            assert by["conventional"] >= max(by.values()) - 1e-12
        meta = json.loads(open(res["meta"]).read())
        assert meta["seed"] == cfg.seed
        assert meta["resolved_config"]["experiment"] == "fig3"
        assert "lambda_star" in meta["stats"]

    def test_fig3_reproducible_bytes(self, tmp_path):
        raw = {"experiment": "fig3", "p_s_grid": [0.5], "mc": TINY_MC}
        r1 = sx.run_experiment(sx.validate_config(raw), tmp_path / "a")
        r2 = sx.run_experiment(sx.validate_config(raw), tmp_path / "b")
        assert open(r1["csv"], "rb").read() == open(r2["csv"], "rb").read()

    def test_fig4_row_count(self, tmp_path):
        cfg = sx.validate_config({
            "experiment": "fig4", "p_s_grid": [0.0, 0.5],
            "gamma_grid": [0.5, 1.5, 2.5], "mc": TINY_MC})
        res = sx.run_experiment(cfg, tmp_path)
        with open(res["csv"], newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6
        assert set(r["gamma"] for r in rows) == {"0.5", "1.5", "2.5"}

    def test_fig6_modes(self, tmp_path):
        cfg = sx.validate_config({
            "experiment": "fig6", "p_s_grid": [0.5],
            "gamma_grid": [1.0, 2.0], "mc": TINY_MC,
            "solver": FAST_SOLVER})
        res = sx.run_experiment(cfg, tmp_path)
        with open(res["csv"], newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["gamma_mode"] for r in rows] == ["1.5", "2", "optimal"]
        meta = json.loads(open(res["meta"]).read())
        assert "0.5" in meta["stats"]["gamma_star"]

    def test_fig7_models(self, tmp_path):
        cfg = sx.validate_config({
            "experiment": "fig7", "gamma_grid": [0.0, 1.5],
            "eh_models": ["a", "d"], "mc": TINY_MC})
        res = sx.run_experiment(cfg, tmp_path)
        with open(res["csv"], newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert {r["eh_model"] for r in rows} == {"a", "d"}

    def test_fig8_schemes(self, tmp_path):
        cfg = sx.validate_config({
            "experiment": "fig8", "p_s_grid": [0.5], "mc": TINY_MC,
            "solver": FAST_SOLVER})
        res = sx.run_experiment(cfg, tmp_path)
        with open(res["csv"], newline="") as fh:
            rows = list(csv.DictReader(fh))
        by = {r["scheme"]: float(r["throughput"]) for r in rows}
        assert by["conventional"] >= max(by.values()) - 1e-12


def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "savetx.cli", *args],
                          capture_output=True, text=True)


class TestCli:
    def test_solve_markov(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"experiment": "fig3"}))
        r = run_cli("--config", str(cfg), "solve-markov", "--p-s", "0.0")
        assert r.returncode == 0
        out = json.loads(r.stdout)
        assert out["lambda_star"] == pytest.approx(0.0153150, abs=1e-6)

    def test_experiment_subcommand(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({
            "experiment": "fig3", "p_s_grid": [1.0], "mc": TINY_MC}))
        r = run_cli("--config", str(cfg), "--out", str(tmp_path / "out"),
                    "--format", "json", "experiment", "fig3")
        assert r.returncode == 0, r.stderr
        res = json.loads(r.stdout)
        assert (tmp_path / "out" / "fig3.csv").exists()
        assert (tmp_path / "out" / "fig3_meta.json").exists()
        assert (tmp_path / "out" / "fig3.json").exists()
        assert res["rows"] == 3

    def test_simulate_threshold(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"experiment": "fig4", "mc": TINY_MC}))
        trace = tmp_path / "trace.csv"
        r = run_cli("--config", str(cfg), "simulate", "--scheme",
                    "threshold", "--gamma", "1.5", "--p-s", "0.5",
                    "--trace", str(trace))
        assert r.returncode == 0, r.stderr
        out = json.loads(r.stdout)
        assert out["throughput"] > 0
        assert trace.exists()

    def test_optimize_threshold(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({
            "experiment": "fig4", "mc": TINY_MC, "solver": FAST_SOLVER}))
        r = run_cli("--config", str(cfg), "optimize-threshold",
                    "--p-s", "0.0")
        assert r.returncode == 0, r.stderr
        out = json.loads(r.stdout)
        assert 0.0 <= out["gamma_star"] <= 3.0

    def test_seed_override(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"experiment": "fig3", "seed": 1}))
        r = run_cli("--config", str(cfg), "--seed", "-5", "solve-markov")
        assert r.returncode == 2
        assert "seed" in r.stderr

    def test_missing_gamma(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"experiment": "fig4", "mc": TINY_MC}))
        r = run_cli("--config", str(cfg), "simulate", "--scheme",
                    "threshold")
        assert r.returncode == 2
        assert "gamma" in r.stderr
