"""End-to-end CLI behaviour: subcommands, exit codes, determinism."""

from __future__ import annotations

import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from calibra.cli import main
from calibra.io import load_benchmarks, load_weights
from calibra.propensity import read_model
from calibra.simulator import default_config, export_daily_cross_section


@pytest.fixture(scope="module")
def demo(tmp_path_factory) -> dict:
    outdir = tmp_path_factory.mktemp("demo")
    config = default_config(population_size=6000, replications=1, seed=424242)
    paths = export_daily_cross_section(config, outdir)
    return {"dir": outdir, **paths}


def digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_cli(*argv: str) -> int:
    return main(list(argv))


class TestFitPropensity:
    def test_writes_loadable_model(self, demo, tmp_path):
        out = tmp_path / "model.csv"
        code = run_cli(
            "fit-propensity",
            "--frame", str(demo["frame"]),
            "--schema", str(demo["schema"]),
            "--l2", "0.05",
            "--out", str(out),
        )
        assert code == 0
        model = read_model(out)
        assert model.converged
        assert model.l2_strength == 0.05
        assert (out.parent / "model.csv.manifest.json").exists()


@pytest.fixture(scope="module")
def model_path(demo, tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "model.csv"
    assert run_cli(
        "fit-propensity", "--frame", str(demo["frame"]),
        "--schema", str(demo["schema"]), "--l2", "0.05", "--out", str(out),
    ) == 0
    return out


@pytest.fixture(scope="module")
def weights_path(demo, model_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("weights") / "weights.csv"
    assert run_cli(
        "weigh", "--respondents", str(demo["respondents"]),
        "--schema", str(demo["schema"]), "--model", str(model_path),
        "--benchmarks", str(demo["benchmark_margins"]), "--mode", "margins",
        "--out", str(out),
    ) == 0
    return out


class TestWeigh:

    def test_margins_mode_weights_sum_to_represented(self, demo, model_path, tmp_path):
        out = tmp_path / "weights.csv"
        report_path = tmp_path / "report.yaml"
        code = run_cli(
            "weigh",
            "--respondents", str(demo["respondents"]),
            "--schema", str(demo["schema"]),
            "--model", str(model_path),
            "--benchmarks", str(demo["benchmark_margins"]),
            "--mode", "margins",
            "--out", str(out),
            "--report", str(report_path),
        )
        assert code == 0
        weights = load_weights(out)
        assert weights.stage == "final"
        report = yaml.safe_load(report_path.read_text())
        omitted = sum(s["population"] for s in report["omitted_strata"])
        table = load_benchmarks(demo["benchmark_margins"])
        assert report["final_weight_sum"] == pytest.approx(
            table.population_total - omitted, rel=1e-9
        )
        assert weights.total == pytest.approx(report["final_weight_sum"], rel=1e-9)

    def test_cells_mode(self, demo, model_path, tmp_path):
        out = tmp_path / "weights.csv"
        code = run_cli(
            "weigh",
            "--respondents", str(demo["respondents"]),
            "--schema", str(demo["schema"]),
            "--model", str(model_path),
            "--benchmarks", str(demo["benchmark_cells"]),
            "--mode", "cells",
            "--out", str(out),
        )
        assert code == 0
        assert load_weights(out).stage == "final"

    def test_mode_mismatch_is_validation_error(self, demo, model_path, tmp_path, capsys):
        code = run_cli(
            "weigh",
            "--respondents", str(demo["respondents"]),
            "--schema", str(demo["schema"]),
            "--model", str(model_path),
            "--benchmarks", str(demo["benchmark_cells"]),
            "--mode", "margins",
            "--out", str(tmp_path / "w.csv"),
        )
        assert code == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["category"] == "validation"


class TestEstimate:
    def test_emits_declared_columns_and_rows(self, demo, weights_path, tmp_path):
        out = tmp_path / "estimates.csv"
        code = run_cli(
            "estimate",
            "--respondents", str(demo["respondents"]),
            "--weights", str(weights_path),
            "--outcome", "cli",
            "--domain", "R01",
            "--out", str(out),
        )
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "estimand,outcome,domain,point,variance,ci_low,ci_high,n,weight_sum"
        estimands = [line.split(",")[0] for line in lines[1:]]
        assert estimands == ["mean", "total", "domain_ratio"]
        mean_row = lines[1].split(",")
        point = float(mean_row[3])
        truth = yaml.safe_load(demo["truth"].read_text())["true_means"]["cli"]
        assert abs(point - truth) < 0.1

    def test_unknown_outcome_fails_validation(self, demo, weights_path, tmp_path):
        code = run_cli(
            "estimate",
            "--respondents", str(demo["respondents"]),
            "--weights", str(weights_path),
            "--outcome", "ghost",
            "--out", str(tmp_path / "e.csv"),
        )
        assert code == 1


class TestValidate:
    def test_consistent_inputs_have_no_findings(self, demo, capsys):
        code = run_cli(
            "validate",
            "--schema", str(demo["schema"]),
            "--respondents", str(demo["respondents"]),
            "--frame", str(demo["frame"]),
            "--benchmarks", str(demo["benchmark_margins"]),
        )
        assert code == 0
        assert "OK: no findings" in capsys.readouterr().out

    def test_unknown_region_finding_names_region(self, demo, tmp_path, capsys):
        bad = tmp_path / "respondents.csv"
        lines = Path(demo["respondents"]).read_text().splitlines()
        parts = lines[1].split(",")
        parts[1] = "ATLANTIS"
        lines.append(",".join(["zz-extra"] + parts[1:]))
        bad.write_text("\n".join(lines) + "\n", encoding="utf-8")
        code = run_cli(
            "validate",
            "--schema", str(demo["schema"]),
            "--respondents", str(bad),
            "--benchmarks", str(demo["benchmark_margins"]),
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "FINDING" in out
        assert "ATLANTIS" in out

    def test_margin_total_mismatch_reports_both_totals(self, tmp_path, capsys):
        path = tmp_path / "margins.csv"
        path.write_text(
            "margin,category,population\nregion,CA,100\nage,young,60\nage,old,39\n",
            encoding="utf-8",
        )
        code = run_cli("validate", "--benchmarks", str(path))
        assert code == 0
        out = capsys.readouterr().out
        assert "99" in out and "100" in out


class TestPipeline:
    def make_pipeline_config(self, demo, outdir: Path) -> Path:
        cfg = {
            "schema": str(demo["schema"]),
            "frame": str(demo["frame"]),
            "respondents": str(demo["respondents"]),
            "benchmarks": str(demo["benchmark_margins"]),
            "mode": "margins",
            "l2": 0.05,
            "outcome": "cli",
            "domain": "R01",
        }
        path = outdir / "pipeline.yaml"
        path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
        return path

    def test_produces_all_artifacts(self, demo, tmp_path):
        cfg = self.make_pipeline_config(demo, tmp_path)
        out = tmp_path / "run"
        assert run_cli("pipeline", "--config", str(cfg), "--out", str(out)) == 0
        for name in (
            "model.csv", "weights.csv", "calibration_report.yaml",
            "estimates.csv", "run_manifest.json",
        ):
            assert (out / name).exists(), name

    def test_equals_sequential_composition(self, demo, tmp_path):
        cfg = self.make_pipeline_config(demo, tmp_path)
        pipe_out = tmp_path / "pipe"
        assert run_cli("pipeline", "--config", str(cfg), "--out", str(pipe_out)) == 0

        solo = tmp_path / "solo"
        solo.mkdir()
        assert run_cli(
            "fit-propensity", "--frame", str(demo["frame"]),
            "--schema", str(demo["schema"]), "--l2", "0.05",
            "--out", str(solo / "model.csv"),
        ) == 0
        assert run_cli(
            "weigh", "--respondents", str(demo["respondents"]),
            "--schema", str(demo["schema"]), "--model", str(solo / "model.csv"),
            "--benchmarks", str(demo["benchmark_margins"]), "--mode", "margins",
            "--out", str(solo / "weights.csv"),
            "--report", str(solo / "calibration_report.yaml"),
        ) == 0
        assert run_cli(
            "estimate", "--respondents", str(demo["respondents"]),
            "--weights", str(solo / "weights.csv"), "--outcome", "cli",
            "--domain", "R01", "--out", str(solo / "estimates.csv"),
        ) == 0
        for name in ("model.csv", "weights.csv", "calibration_report.yaml", "estimates.csv"):
            assert digest(pipe_out / name) == digest(solo / name), name


class TestSimulateCommand:
    def test_writes_reports(self, tmp_path):
        sim_cfg = {
            "seed": 5,
            "population_size": 2000,
            "replications": 2,
            "regions": [
                {"name": "A", "share": 0.5, "density": "low"},
                {"name": "B", "share": 0.5, "density": "high"},
            ],
            "covariates": [{"name": "age", "levels": ["y", "o"], "probs": [0.6, 0.4]}],
            "frame_coverage_model": {"intercept": 1.5},
            "response_model": {"intercept": 0.3, "coefficients": {"age:o": 0.5}},
            "outcome_models": [
                {"name": "cli", "intercept": -0.5, "coefficients": {"age:o": 0.7},
                 "noise_sd": 1.0, "binary_threshold": 0.0}
            ],
            "inclusion_probabilities": {"A": 0.5, "B": 0.5},
        }
        cfg_path = tmp_path / "sim.yaml"
        cfg_path.write_text(yaml.safe_dump(sim_cfg), encoding="utf-8")
        out = tmp_path / "simout"
        assert run_cli("simulate", "--config", str(cfg_path), "--out", str(out)) == 0
        assert (out / "replications.csv").exists()
        assert (out / "summary.csv").exists()
        assert (out / "failures.csv").exists()
        lines = (out / "replications.csv").read_text().strip().splitlines()
        assert lines[0] == "replication,estimand,method,bias,rmse,ci_covered,design_effect"
        assert len(lines) == 1 + 2 * 3  # 2 replications x 3 methods x 1 outcome


class TestExitCodes:
    def test_missing_file_is_io_error_naming_path(self, demo, tmp_path, capsys):
        code = run_cli(
            "fit-propensity",
            "--frame", str(tmp_path / "nope.csv"),
            "--schema", str(demo["schema"]),
            "--out", str(tmp_path / "m.csv"),
        )
        assert code == 3
        err = json.loads(capsys.readouterr().err.strip())
        assert err["category"] == "io"
        assert "nope.csv" in err["error"]

    def test_invalid_benchmark_is_validation_error(self, tmp_path, capsys):
        bad = tmp_path / "cells.csv"
        bad.write_text("region,population\nCA,-5\n", encoding="utf-8")
        code = run_cli("validate", "--benchmarks", str(bad))
        assert code == 0  # validate reports findings instead of failing
        assert "negative" in capsys.readouterr().out

    def test_degenerate_frame_is_numerical_error(self, demo, tmp_path, capsys):
        frame = tmp_path / "frame.csv"
        original = Path(demo["frame"]).read_text().splitlines()
        header = original[0]
        rows = [",".join([p if i != 3 else "1" for i, p in enumerate(line.split(","))])
                for line in original[1:]]
        frame.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")
        code = run_cli(
            "fit-propensity", "--frame", str(frame),
            "--schema", str(demo["schema"]), "--out", str(tmp_path / "m.csv"),
        )
        assert code == 2
        assert json.loads(capsys.readouterr().err.strip())["category"] == "numerical"

    def test_missing_required_option(self, demo, tmp_path):
        assert run_cli("fit-propensity", "--frame", str(demo["frame"])) == 1


class TestDeterminism:
    """Rerunning the identical command overwrites every output with
    byte-identical content."""

    def test_every_subcommand_is_byte_stable(self, demo, tmp_path):
        cfg = TestPipeline().make_pipeline_config(demo, tmp_path)
        out = tmp_path / "p"
        names = (
            "model.csv", "weights.csv", "calibration_report.yaml",
            "estimates.csv", "run_manifest.json",
            "model.csv.manifest.json", "weights.csv.manifest.json",
            "estimates.csv.manifest.json",
        )
        assert run_cli("pipeline", "--config", str(cfg), "--out", str(out)) == 0
        first = {name: digest(out / name) for name in names}
        assert run_cli("pipeline", "--config", str(cfg), "--out", str(out)) == 0
        second = {name: digest(out / name) for name in names}
        assert first == second

    def test_simulate_is_byte_stable(self, tmp_path):
        sim_cfg = {
            "seed": 11,
            "population_size": 1500,
            "replications": 2,
            "regions": [{"name": "A", "share": 1.0}],
            "covariates": [{"name": "age", "levels": ["y", "o"], "probs": [0.6, 0.4]}],
            "frame_coverage_model": {"intercept": 1.5},
            "response_model": {"intercept": 0.3, "coefficients": {"age:o": 0.5}},
            "outcome_models": [
                {"name": "cli", "intercept": -0.5, "coefficients": {"age:o": 0.7},
                 "noise_sd": 1.0, "binary_threshold": 0.0}
            ],
            "inclusion_probabilities": {"A": 0.5},
        }
        cfg_path = tmp_path / "sim.yaml"
        cfg_path.write_text(yaml.safe_dump(sim_cfg), encoding="utf-8")
        out = tmp_path / "simout"
        names = ("replications.csv", "summary.csv", "failures.csv", "run_manifest.json")
        assert run_cli("simulate", "--config", str(cfg_path), "--out", str(out)) == 0
        first = {name: digest(out / name) for name in names}
        assert run_cli("simulate", "--config", str(cfg_path), "--out", str(out)) == 0
        second = {name: digest(out / name) for name in names}
        assert first == second


class TestSubprocessEntry:
    def test_module_invocation(self):
        proc = subprocess.run(
            [sys.executable, "-m", "calibra", "--help"], capture_output=True, text=True
        )
        assert proc.returncode == 0
        assert "fit-propensity" in proc.stdout
