#!/usr/bin/env python3
"""Build a self-contained demo dataset (schema, frame, respondents,
benchmarks, pipeline config) from one simulated daily cross-section.

With --continuous-age the age column carries raw ages instead of bucket
labels, so the ingestion-time bucketing path is exercised end to end.

    python scripts/make_demo_data.py --out demo --population 20000
    calibra pipeline --config demo/pipeline.yaml --out demo/run
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

import numpy as np
import yaml

from calibra.simulator import default_config, export_daily_cross_section

AGE_RANGES = {"18-24": (18, 25), "25-44": (25, 45), "45-64": (45, 65), "65+": (65, 90)}


def continuize_age_column(path: Path, rng: np.random.Generator) -> None:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    j = header.index("age")
    for row in rows[1:]:
        lo, hi = AGE_RANGES[row[j]]
        row[j] = repr(float(np.floor(rng.uniform(lo, hi) * 2) / 2))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        csv.writer(fh).writerows(rows)


def continuize_schema(path: Path) -> None:
    with open(path, "r", encoding="utf-8") as fh:
        schema = yaml.safe_load(fh)
    for cov in schema["covariates"]:
        if cov["name"] == "age":
            cov.clear()
            cov.update(
                name="age",
                kind="continuous",
                bucket_edges=[25.0, 45.0, 65.0],
                bucket_labels=["18-24", "25-44", "45-64", "65+"],
            )
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(schema, fh, sort_keys=False)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument("--seed", type=int, default=424242)
    parser.add_argument("--population", type=int, default=20_000)
    parser.add_argument("--continuous-age", action="store_true")
    args = parser.parse_args()

    config = default_config(
        seed=args.seed, population_size=args.population, replications=1
    )
    paths = export_daily_cross_section(config, args.out)
    if args.continuous_age:
        rng = np.random.default_rng(args.seed + 1)
        continuize_age_column(paths["respondents"], rng)
        continuize_age_column(paths["frame"], rng)
        continuize_schema(paths["schema"])

    pipeline_cfg = {
        "schema": str(paths["schema"]),
        "frame": str(paths["frame"]),
        "respondents": str(paths["respondents"]),
        "benchmarks": str(paths["benchmark_margins"]),
        "mode": "margins",
        "min_answered": 2,
        "l2": config.l2_strength,
        "outcome": "cli",
        "domain": config.regions[0].name,
    }
    cfg_path = args.out / "pipeline.yaml"
    with open(cfg_path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(pipeline_cfg, fh, sort_keys=False)

    with open(paths["truth"], "r", encoding="utf-8") as fh:
        truth = yaml.safe_load(fh)
    print(f"wrote demo dataset to {args.out}")
    print(f"  population {truth['population_size']}, "
          f"{truth['n_sampled']} sampled, {truth['n_respondents']} respondents")
    print(f"  true means: {truth['true_means']}")
    print(f"next: calibra pipeline --config {cfg_path} --out {args.out / 'run'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
