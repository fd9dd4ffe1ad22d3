"""Experiment harness: spec validation, CSV determinism, worker
equivalence, calibration, and the CLI surface."""

import json

import pytest

from enttest.cli import main as cli_main
from enttest.experiments import (
    CSV_COLUMNS,
    CalibrationFailed,
    ConfigError,
    ExperimentSpec,
    calibrate,
    default_spec,
    make_instance_pair,
    run_experiment,
)
from enttest.testers import DEFAULT_CONFIG, load_config


class TestExperimentSpec:
    def test_validation(self):
        with pytest.raises(ConfigError):
            ExperimentSpec(kind="nonsense").validate()
        with pytest.raises(ConfigError):
            ExperimentSpec(kind="error_grid", n_values=[], eps_values=[0.2]).validate()
        with pytest.raises(ConfigError):
            ExperimentSpec(kind="error_grid", n_values=[128], eps_values=[0.2], trials=0).validate()

    def test_json_roundtrip(self, tmp_path):
        spec = default_spec("error_grid")
        path = tmp_path / "spec.json"
        spec.to_json(path)
        back = ExperimentSpec.from_json(path)
        assert back == spec

    def test_unknown_json_field(self, tmp_path):
        path = tmp_path / "spec.json"
        json.dump({"kind": "error_grid", "bogus": 1}, open(path, "w"))
        with pytest.raises(ConfigError):
            ExperimentSpec.from_json(path)

    def test_default_specs_valid(self):
        for kind in ("oracle_suite", "error_grid", "scaling", "bayesnet", "calibrate"):
            default_spec(kind).validate()


class TestInstanceFamilies:
    def test_null_families_identical(self):
        for fam in ("null:uniform", "null:zipf", "null:dense"):
            p, q = make_instance_pair(fam, 64, 0.3, master=1, cell=0)
            assert p == q

    def test_dense_family_deterministic_per_cell(self):
        a, _ = make_instance_pair("null:dense", 64, 0.3, master=1, cell=0)
        b, _ = make_instance_pair("null:dense", 64, 0.3, master=1, cell=0)
        c, _ = make_instance_pair("null:dense", 64, 0.3, master=1, cell=1)
        assert a == b
        assert a != c

    def test_far_families_certified(self):
        from enttest.core import entropy

        p, q = make_instance_pair("far:entropy-gap", 256, 0.3, master=1, cell=0)
        assert entropy(q) - entropy(p) == pytest.approx(0.3, abs=1e-10)
        p, q = make_instance_pair("far:mi", 256, 0.3, master=1, cell=0)
        assert abs(entropy(p) - entropy(q)) == pytest.approx(0.3, abs=1e-8)


class TestReproducibility:
    def _grid_spec(self, out):
        return ExperimentSpec(
            kind="error_grid", n_values=[128], eps_values=[0.3], trials=12,
            seed=2024, out_dir=str(out),
        )

    def test_rerun_byte_identical(self, tmp_path):
        s1 = self._grid_spec(tmp_path / "a")
        s2 = self._grid_spec(tmp_path / "b")
        assert run_experiment(s1, workers=1) == 0
        assert run_experiment(s2, workers=1) == 0
        a = (tmp_path / "a" / "results.csv").read_bytes()
        b = (tmp_path / "b" / "results.csv").read_bytes()
        assert a == b

    def test_worker_count_invariance(self, tmp_path):
        s1 = self._grid_spec(tmp_path / "w1")
        s4 = self._grid_spec(tmp_path / "w4")
        run_experiment(s1, workers=1)
        run_experiment(s4, workers=4)
        assert (tmp_path / "w1" / "results.csv").read_bytes() == (
            tmp_path / "w4" / "results.csv"
        ).read_bytes()

    def test_csv_header(self, tmp_path):
        spec = self._grid_spec(tmp_path / "h")
        run_experiment(spec, workers=1)
        header = open(tmp_path / "h" / "results.csv").readline().strip()
        assert header == ",".join(CSV_COLUMNS)
        assert all(line.split(",")[10] == "0" for line in
                   open(tmp_path / "h" / "results.csv").readlines()[1:])


class TestScalingSuite:
    def test_small_scaling_run(self, tmp_path):
        spec = ExperimentSpec(
            kind="scaling", n_values=[2**10, 2**12, 2**14], eps_values=[0.3],
            trials=10, seed=5, out_dir=str(tmp_path / "s"),
        )
        assert run_experiment(spec, workers=1) == 0
        assert (tmp_path / "s" / "plot_scaling.svg").exists()
        svg = (tmp_path / "s" / "plot_scaling.svg").read_text()
        assert svg.startswith("<svg") and "polyline" in svg


class TestCalibration:
    def test_impossible_cap(self):
        with pytest.raises(CalibrationFailed):
            calibrate(default_spec("calibrate"), mult_cap=0)

    def test_small_calibration_deterministic(self):
        spec = ExperimentSpec(kind="calibrate", n_values=[256], eps_values=[0.1],
                              trials=80, seed=99)
        cfg1, prov1, _ = calibrate(spec)
        cfg2, prov2, _ = calibrate(spec)
        assert cfg1 == cfg2
        assert prov1 == prov2

    def test_calibrate_kind_writes_config(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "1754600000")
        spec = ExperimentSpec(kind="calibrate", n_values=[256], eps_values=[0.1],
                              trials=60, seed=7, out_dir=str(tmp_path / "cal"))
        assert run_experiment(spec, workers=1) == 0
        cfg_path = tmp_path / "cal" / "calibrated_config.txt"
        cfg = load_config(cfg_path)
        assert cfg.c_T_threshold > 0
        text = cfg_path.read_text()
        assert text.startswith("#")
        # idempotent under the pinned date
        spec2 = ExperimentSpec(kind="calibrate", n_values=[256], eps_values=[0.1],
                               trials=60, seed=7, out_dir=str(tmp_path / "cal2"))
        run_experiment(spec2, workers=1)
        assert (tmp_path / "cal2" / "calibrated_config.txt").read_bytes() == cfg_path.read_bytes()


class TestCli:
    def test_grid_subcommand(self, tmp_path):
        spec = {
            "kind": "error_grid", "n_values": [128], "eps_values": [0.4],
            "trials": 8, "seed": 3, "out_dir": str(tmp_path / "out"),
        }
        path = tmp_path / "spec.json"
        json.dump(spec, open(path, "w"))
        assert cli_main(["grid", "--spec", str(path), "--check"]) == 0
        assert (tmp_path / "out" / "results.csv").exists()

    def test_bad_spec_exits_one(self, tmp_path):
        path = tmp_path / "spec.json"
        json.dump({"kind": "error_grid", "n_values": [], "eps_values": [0.2]}, open(path, "w"))
        assert cli_main(["grid", "--spec", str(path)]) == 1

    def test_kind_mismatch_exits_one(self, tmp_path):
        path = tmp_path / "spec.json"
        json.dump({"kind": "scaling", "n_values": [64], "eps_values": [0.3]}, open(path, "w"))
        assert cli_main(["grid", "--spec", str(path)]) == 1

    def test_missing_spec_file(self):
        assert cli_main(["grid", "--spec", "/nonexistent/spec.json"]) == 1

    def test_seed_and_out_overrides(self, tmp_path):
        out = tmp_path / "ovr"
        code = cli_main([
            "grid", "--spec", _write_tiny_grid(tmp_path), "--seed", "11",
            "--out", str(out), "--trials", "5",
        ])
        assert code == 0
        content = open(out / "results.csv").readlines()[1]
        assert content.strip().endswith(",11")

    def test_check_failure_exit_two(self, tmp_path, monkeypatch):
        # sabotage: a config whose Z threshold fires on everything
        from enttest.testers import save_config, DEFAULT_CONFIG
        import dataclasses

        bad = dataclasses.replace(DEFAULT_CONFIG, c_Z_threshold=1e-9)
        cfg_path = tmp_path / "bad.cfg"
        save_config(bad, cfg_path)
        spec = {
            "kind": "error_grid", "n_values": [128], "eps_values": [0.4],
            "trials": 6, "seed": 3, "out_dir": str(tmp_path / "badout"),
            "cfg_path": str(cfg_path),
        }
        path = tmp_path / "spec.json"
        json.dump(spec, open(path, "w"))
        assert cli_main(["grid", "--spec", str(path), "--check"]) == 2


def _write_tiny_grid(tmp_path):
    spec = {
        "kind": "error_grid", "n_values": [64], "eps_values": [0.4],
        "trials": 5, "seed": 1, "out_dir": str(tmp_path / "tiny"),
    }
    path = tmp_path / "tiny.json"
    json.dump(spec, open(path, "w"))
    return str(path)
