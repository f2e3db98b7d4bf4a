"""Command-line entry point.

Subcommands: fit-propensity, weigh, estimate, simulate, pipeline, validate.
Each accepts an optional --config YAML supplying defaults; explicit flags
win. Every run writes a manifest (config hash, input digests, package
version) next to its outputs. Failures print a single machine-parseable
JSON line to stderr and exit 1 (validation), 2 (numerical) or 3 (I/O).
The CALIBRA_LOG environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import __version__
from .calibration import RakingConfig, post_stratify, rake, write_report
from .core import REGION_FIELD, BenchmarkTable, filter_eligible
from .errors import InputError, NumericalError
from .estimation import (
    estimate_domain_ratio,
    estimate_mean,
    estimate_ratio,
    estimate_total,
    outcome_column,
    region_indicator,
)
from .io import (
    load_benchmarks,
    load_frame,
    load_respondents,
    load_schema,
    load_weights,
    write_weights,
)
from .propensity import TrimPolicy, fit_propensity, ipsw_weights, read_model, write_model
from .simulator import (
    load_sim_config,
    run_replications,
    write_failures_csv,
    write_replication_csv,
    write_summary_csv,
)

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """Merged options for one CLI run (config file defaults, flags win)."""

    subcommand: str
    schema: str | None = None
    respondents: str | None = None
    frame: str | None = None
    benchmarks: str | None = None
    model: str | None = None
    weights: str | None = None
    out: str | None = None
    report: str | None = None
    mode: str = "margins"
    min_answered: int = 2
    l2: float = 1.0
    include_region_margin: bool = True
    trim_lower_divisor: float = 30.0
    trim_upper_multiplier: float = 10.0
    alpha: float = 1.96
    outcome: str | None = None
    denominator: str | None = None
    domain: str | None = None
    seed: int = 0
    sim_config: str | None = None

    def trim_policy(self) -> TrimPolicy:
        return TrimPolicy(
            lower_divisor=self.trim_lower_divisor,
            upper_multiplier=self.trim_upper_multiplier,
        )

    def require(self, *fields: str) -> None:
        for name in fields:
            if getattr(self, name) in (None, ""):
                raise InputError(f"{self.subcommand}: missing required option {name!r}")


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise InputError(f"{path}: config file must be a mapping")
    return raw


def _merge_config(subcommand: str, args: argparse.Namespace) -> RunConfig:
    cfg = _load_config_file(getattr(args, "config", None))
    run = RunConfig(subcommand=subcommand)
    for key, value in cfg.items():
        if not hasattr(run, key):
            raise InputError(f"unknown config key {key!r}")
        if key != "subcommand":
            setattr(run, key, value)
    for key, value in vars(args).items():
        if key in ("config", "func") or value is None:
            continue
        if hasattr(run, key):
            setattr(run, key, value)
    return run


def _sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(target: Path, run: RunConfig, inputs: list[str | None]) -> None:
    config_blob = json.dumps(vars(run), sort_keys=True, default=str).encode()
    manifest = {
        "subcommand": run.subcommand,
        "config_sha256": hashlib.sha256(config_blob).hexdigest(),
        "inputs": {str(p): _sha256(p) for p in inputs if p},
        "calibra_version": __version__,
    }
    if target.is_dir():
        path = target / "run_manifest.json"
    else:
        path = target.with_name(target.name + ".manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _calibrate(run: RunConfig, weights, respondents, table: BenchmarkTable):
    if run.mode not in ("cells", "margins"):
        raise InputError(f"unknown calibration mode {run.mode!r}")
    if table.mode != run.mode:
        raise InputError(
            f"benchmark table is {table.mode}-mode but --mode is {run.mode!r}"
        )
    if run.mode == "cells":
        return post_stratify(weights, respondents, table, run.trim_policy())
    order = tuple(
        m.name for m in table.margins if run.include_region_margin or m.name != REGION_FIELD
    )
    if not order:
        raise InputError("no margins left to rake (include_region_margin=false removed all)")
    config = RakingConfig(margin_order=order, trim=run.trim_policy())
    return rake(weights, respondents, table, config)


def cmd_fit_propensity(args: argparse.Namespace) -> int:
    run = _merge_config("fit-propensity", args)
    run.require("frame", "schema", "out")
    schema = load_schema(run.schema)
    frame = load_frame(run.frame, schema)
    model = fit_propensity(frame, schema, run.l2)
    out = Path(run.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_model(model, out)
    _write_manifest(out, run, [run.frame, run.schema])
    logger.info("wrote model to %s (converged=%s)", out, model.converged)
    return 0


def cmd_weigh(args: argparse.Namespace) -> int:
    run = _merge_config("weigh", args)
    run.require("respondents", "schema", "model", "benchmarks", "out")
    schema = load_schema(run.schema)
    respondents = filter_eligible(
        load_respondents(run.respondents, schema), run.min_answered
    )
    if not respondents:
        raise InputError("no eligible respondents after the answered-count filter")
    model = read_model(run.model)
    table = load_benchmarks(run.benchmarks)
    ipsw = ipsw_weights(model, respondents, run.trim_policy())
    final, report = _calibrate(run, ipsw, respondents, table)
    out = Path(run.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_weights(final, out)
    if run.report:
        write_report(report, run.report)
    _write_manifest(out, run, [run.respondents, run.schema, run.model, run.benchmarks])
    return 0


def cmd_estimate(args: argparse.Namespace) -> int:
    run = _merge_config("estimate", args)
    run.require("respondents", "weights", "outcome", "out")
    respondents = load_respondents(run.respondents, schema=None)
    weights = load_weights(run.weights)
    y = outcome_column(respondents, run.outcome)
    rows = []

    def emit(estimand: str, outcome: str, domain: str, est) -> None:
        rows.append(
            [estimand, outcome, domain, repr(est.point), repr(est.variance),
             repr(est.ci_low), repr(est.ci_high), str(est.n_respondents), repr(est.weight_sum)]
        )

    emit("mean", run.outcome, "all", estimate_mean(weights, y, run.alpha))
    emit("total", run.outcome, "all", estimate_total(weights, y, run.alpha))
    if run.denominator:
        z = outcome_column(respondents, run.denominator)
        emit(
            "ratio", f"{run.outcome}/{run.denominator}", "all",
            estimate_ratio(weights, y, z, run.alpha),
        )
    if run.domain:
        z = region_indicator(respondents, run.domain)
        emit(
            "domain_ratio", run.outcome, run.domain,
            estimate_domain_ratio(weights, y, z, run.alpha),
        )
    out = Path(run.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    import csv

    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["estimand", "outcome", "domain", "point", "variance", "ci_low", "ci_high", "n", "weight_sum"]
        )
        writer.writerows(rows)
    _write_manifest(out, run, [run.respondents, run.weights])
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    run = _merge_config("simulate", args)
    run.require("sim_config", "out")
    config = load_sim_config(run.sim_config)
    report = run_replications(config)
    outdir = Path(run.out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_replication_csv(report, outdir / "replications.csv")
    write_summary_csv(report, outdir / "summary.csv")
    write_failures_csv(report, outdir / "failures.csv")
    _write_manifest(outdir, run, [run.sim_config])
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    run = _merge_config("pipeline", args)
    run.require("schema", "frame", "respondents", "benchmarks", "out", "outcome")
    outdir = Path(run.out)
    outdir.mkdir(parents=True, exist_ok=True)

    fit_args = argparse.Namespace(
        config=None, frame=run.frame, schema=run.schema, l2=run.l2,
        out=str(outdir / "model.csv"),
    )
    cmd_fit_propensity(fit_args)

    weigh_args = argparse.Namespace(
        config=None, respondents=run.respondents, schema=run.schema,
        model=str(outdir / "model.csv"), benchmarks=run.benchmarks, mode=run.mode,
        min_answered=run.min_answered, include_region_margin=run.include_region_margin,
        trim_lower_divisor=run.trim_lower_divisor,
        trim_upper_multiplier=run.trim_upper_multiplier,
        out=str(outdir / "weights.csv"), report=str(outdir / "calibration_report.yaml"),
    )
    cmd_weigh(weigh_args)

    estimate_args = argparse.Namespace(
        config=None, respondents=run.respondents, weights=str(outdir / "weights.csv"),
        outcome=run.outcome, denominator=run.denominator, domain=run.domain,
        alpha=run.alpha, out=str(outdir / "estimates.csv"),
    )
    cmd_estimate(estimate_args)

    _write_manifest(outdir, run, [run.schema, run.frame, run.respondents, run.benchmarks])
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    run = _merge_config("validate", args)
    findings: list[str] = []
    schema = None
    if run.schema:
        try:
            schema = load_schema(run.schema)
        except InputError as exc:
            findings.append(f"schema: {exc}")
    table = None
    if run.benchmarks:
        try:
            table = load_benchmarks(run.benchmarks)
        except InputError as exc:
            findings.append(f"benchmarks: {exc}")
    respondents = None
    if run.respondents:
        try:
            respondents = load_respondents(run.respondents, schema)
        except InputError as exc:
            findings.append(f"respondents: {exc}")
    if run.frame and schema is not None:
        try:
            load_frame(run.frame, schema)
        except InputError as exc:
            findings.append(f"frame: {exc}")
    if respondents is not None and table is not None:
        findings.extend(_coverage_findings(respondents, table))
    for line in findings:
        print(f"FINDING: {line}")
    if not findings:
        print("OK: no findings")
    return 0


def _coverage_findings(respondents, table: BenchmarkTable) -> list[str]:
    """Check that every respondent maps into the benchmark categories."""
    findings = []
    if table.mode == "margins":
        for margin in table.margins:
            known = set(margin.counts)
            for i, r in enumerate(respondents, start=2):
                cat = r.margin_category(margin.variables)
                if cat not in known:
                    findings.append(
                        f"row {i}: respondent {r.respondent_id!r} category {cat!r} "
                        f"not in margin {margin.name!r}"
                    )
    else:
        for i, r in enumerate(respondents, start=2):
            key = r.cell_key(table.dimensions)
            if key not in table.cells:
                findings.append(
                    f"row {i}: respondent {r.respondent_id!r} cell {key!r} not in benchmark cells"
                )
    return findings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="calibra",
        description="Two-stage survey weighting with design-based estimators and a simulation harness.",
    )
    parser.add_argument("--version", action="version", version=f"calibra {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("fit-propensity", help="fit the response-propensity model on a frame file")
    p.add_argument("--config")
    p.add_argument("--frame")
    p.add_argument("--schema")
    p.add_argument("--l2", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit_propensity)

    p = sub.add_parser("weigh", help="produce final calibrated weights for respondents")
    p.add_argument("--config")
    p.add_argument("--respondents")
    p.add_argument("--schema")
    p.add_argument("--model")
    p.add_argument("--benchmarks")
    p.add_argument("--mode", choices=["cells", "margins"])
    p.add_argument("--min-answered", dest="min_answered", type=int)
    p.add_argument(
        "--no-region-margin", dest="include_region_margin", action="store_const", const=False
    )
    p.add_argument("--trim-lower-divisor", dest="trim_lower_divisor", type=float)
    p.add_argument("--trim-upper-multiplier", dest="trim_upper_multiplier", type=float)
    p.add_argument("--out")
    p.add_argument("--report")
    p.set_defaults(func=cmd_weigh)

    p = sub.add_parser("estimate", help="weighted mean/total/ratio estimates with intervals")
    p.add_argument("--config")
    p.add_argument("--respondents")
    p.add_argument("--weights")
    p.add_argument("--outcome")
    p.add_argument("--denominator")
    p.add_argument("--domain")
    p.add_argument("--alpha", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="run the Monte-Carlo evaluation harness")
    p.add_argument("--config", dest="sim_config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pipeline", help="fit, weigh and estimate in one config-driven run")
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("validate", help="dry-run consistency checks, no outputs written")
    p.add_argument("--config")
    p.add_argument("--schema")
    p.add_argument("--respondents")
    p.add_argument("--frame")
    p.add_argument("--benchmarks")
    p.set_defaults(func=cmd_validate)

    return parser


def _fail(code: int, category: str, exc: BaseException) -> int:
    print(json.dumps({"error": str(exc), "category": category}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("CALIBRA_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        return _fail(1, "validation", exc)
    except NumericalError as exc:
        return _fail(2, "numerical", exc)
    except OSError as exc:
        return _fail(3, "io", exc)


if __name__ == "__main__":
    sys.exit(main())
