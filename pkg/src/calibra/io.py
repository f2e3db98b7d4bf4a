"""CSV and config-file ingestion/serialization for the core data model.

All files are UTF-8, comma-delimited, '.' decimal separator. Floats are
written with repr() so a load -> write -> load round trip reproduces values
exactly.

Formats:
  respondents.csv   respondent_id,region,answered_count,<covariates...>,<y_ outcomes...>
  frame.csv         unit_id,region,sampled,responded,<covariates...>   (booleans 0/1)
  benchmark cells   <dim1>,<dim2>,...,population
  benchmark margins margin,category,population
  weights.csv       respondent_id,weight,stage
  schema file       YAML/JSON mapping with a `covariates` list
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable

import yaml

from .core import (
    BenchmarkTable,
    CovariateSchema,
    CovariateSpec,
    FrameUnit,
    Margin,
    RespondentRecord,
    WeightVector,
    bucketize,
)
from .errors import InputError

OUTCOME_PREFIX = "y_"


def _fmt(x: float) -> str:
    return repr(float(x))


def load_schema(path: str | Path) -> CovariateSchema:
    """Parse a covariate schema from a YAML (or JSON) config file."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict) or "covariates" not in raw:
        raise InputError(f"{path}: schema file must be a mapping with a 'covariates' list")
    specs = []
    for entry in raw["covariates"]:
        if not isinstance(entry, dict) or "name" not in entry or "kind" not in entry:
            raise InputError(f"{path}: each covariate needs at least 'name' and 'kind'")
        kind = entry["kind"]
        if kind == "categorical":
            specs.append(
                CovariateSpec(
                    name=str(entry["name"]),
                    kind=kind,
                    levels=tuple(str(v) for v in entry.get("levels", ())),
                )
            )
        else:
            specs.append(
                CovariateSpec(
                    name=str(entry["name"]),
                    kind=kind,
                    bucket_edges=tuple(float(v) for v in entry.get("bucket_edges", ())),
                    bucket_labels=tuple(str(v) for v in entry.get("bucket_labels", ())),
                )
            )
    return CovariateSchema(covariates=tuple(specs))


def write_schema(schema: CovariateSchema, path: str | Path) -> None:
    data = {"covariates": []}
    for spec in schema:
        entry: dict = {"name": spec.name, "kind": spec.kind}
        if spec.kind == "categorical":
            entry["levels"] = list(spec.levels)
        else:
            entry["bucket_edges"] = list(spec.bucket_edges)
            entry["bucket_labels"] = list(spec.bucket_labels)
        data["covariates"].append(entry)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(data, fh, sort_keys=False)


def _read_rows(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise InputError(f"{path}: empty file")
        header = list(reader.fieldnames)
        rows = list(reader)
    return header, rows


def _check_columns(path, header: list[str], required: list[str], allowed_extra=None) -> list[str]:
    missing = [c for c in required if c not in header]
    if missing:
        raise InputError(f"{path}: missing required columns {missing}")
    extra = [c for c in header if c not in required]
    if allowed_extra is None:
        if extra:
            raise InputError(f"{path}: unexpected columns {extra}")
        return []
    bad = [c for c in extra if not allowed_extra(c)]
    if bad:
        raise InputError(f"{path}: unexpected columns {bad}")
    return extra


def _covariate_value(path, rownum: int, spec: CovariateSpec, raw: str) -> str:
    """Validate or bucketize one covariate cell.

    Continuous covariates accept either a raw number (bucketized here) or an
    already-bucketized label, so serialized files load back unchanged.
    """
    if spec.kind == "categorical":
        if raw not in spec.levels:
            raise InputError(
                f"{path}:{rownum}: unknown level {raw!r} for covariate {spec.name!r}"
            )
        return raw
    try:
        value = float(raw)
    except ValueError:
        if raw in spec.bucket_labels:
            return raw
        raise InputError(
            f"{path}:{rownum}: covariate {spec.name!r}: {raw!r} is neither a number "
            f"nor a known bucket label"
        ) from None
    try:
        return bucketize(value, spec)
    except InputError as exc:
        raise InputError(f"{path}:{rownum}: {exc}") from None


def load_respondents(path: str | Path, schema: CovariateSchema | None) -> list[RespondentRecord]:
    """Parse a respondents file, validating and bucketizing covariates
    against the schema. With schema=None (used when only outcomes matter,
    e.g. estimation) covariate columns pass through unvalidated."""
    header, rows = _read_rows(path)
    if schema is None:
        required = ["respondent_id", "region", "answered_count"]
        extra = _check_columns(path, header, required, allowed_extra=lambda c: True)
        passthrough = [c for c in extra if not c.startswith(OUTCOME_PREFIX)]
    else:
        required = ["respondent_id", "region", "answered_count", *schema.names]
        extra = _check_columns(
            path, header, required, allowed_extra=lambda c: c.startswith(OUTCOME_PREFIX)
        )
        passthrough = []
    outcome_cols = [c for c in extra if c.startswith(OUTCOME_PREFIX)]
    records: list[RespondentRecord] = []
    seen: set[str] = set()
    for i, row in enumerate(rows, start=2):
        rid = row["respondent_id"]
        if not rid:
            raise InputError(f"{path}:{i}: empty respondent_id")
        if rid in seen:
            raise InputError(f"{path}:{i}: duplicate respondent_id {rid!r}")
        seen.add(rid)
        if not row["region"]:
            raise InputError(f"{path}:{i}: empty region")
        try:
            answered = int(row["answered_count"])
        except ValueError:
            raise InputError(f"{path}:{i}: answered_count {row['answered_count']!r} is not an integer") from None
        if answered < 0:
            raise InputError(f"{path}:{i}: negative answered_count")
        if schema is None:
            values = {c: row[c] for c in passthrough}
        else:
            values = {
                spec.name: _covariate_value(path, i, spec, row[spec.name]) for spec in schema
            }
        outcomes = {}
        for col in outcome_cols:
            try:
                outcomes[col[len(OUTCOME_PREFIX):]] = float(row[col])
            except ValueError:
                raise InputError(f"{path}:{i}: outcome {col!r}: {row[col]!r} is not a number") from None
        records.append(
            RespondentRecord(
                respondent_id=rid,
                region=row["region"],
                covariate_values=values,
                outcomes=outcomes,
                answered_count=answered,
            )
        )
    return records


def write_respondents(records: Iterable[RespondentRecord], schema: CovariateSchema, path: str | Path) -> None:
    records = list(records)
    outcome_names: list[str] = []
    for r in records:
        for name in r.outcomes:
            if name not in outcome_names:
                outcome_names.append(name)
    header = ["respondent_id", "region", "answered_count", *schema.names] + [
        OUTCOME_PREFIX + n for n in outcome_names
    ]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in records:
            row = [r.respondent_id, r.region, str(r.answered_count)]
            row += [r.covariate_values[n] for n in schema.names]
            row += [_fmt(r.outcomes[n]) for n in outcome_names]
            writer.writerow(row)


def _parse_bool(path, rownum: int, col: str, raw: str) -> bool:
    if raw == "0":
        return False
    if raw == "1":
        return True
    raise InputError(f"{path}:{rownum}: column {col!r} must be 0 or 1, got {raw!r}")


def load_frame(path: str | Path, schema: CovariateSchema) -> list[FrameUnit]:
    header, rows = _read_rows(path)
    required = ["unit_id", "region", "sampled", "responded", *schema.names]
    _check_columns(path, header, required)
    units: list[FrameUnit] = []
    seen: set[str] = set()
    for i, row in enumerate(rows, start=2):
        uid = row["unit_id"]
        if not uid:
            raise InputError(f"{path}:{i}: empty unit_id")
        if uid in seen:
            raise InputError(f"{path}:{i}: duplicate unit_id {uid!r}")
        seen.add(uid)
        sampled = _parse_bool(path, i, "sampled", row["sampled"])
        responded = _parse_bool(path, i, "responded", row["responded"])
        if responded and not sampled:
            raise InputError(f"{path}:{i}: responded=1 requires sampled=1")
        values = {
            spec.name: _covariate_value(path, i, spec, row[spec.name]) for spec in schema
        }
        units.append(
            FrameUnit(
                unit_id=uid,
                region=row["region"],
                covariate_values=values,
                sampled=sampled,
                responded=responded,
            )
        )
    return units


def write_frame(units: Iterable[FrameUnit], schema: CovariateSchema, path: str | Path) -> None:
    header = ["unit_id", "region", "sampled", "responded", *schema.names]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for u in units:
            row = [u.unit_id, u.region, "1" if u.sampled else "0", "1" if u.responded else "0"]
            row += [u.covariate_values[n] for n in schema.names]
            writer.writerow(row)


def load_benchmarks(path: str | Path) -> BenchmarkTable:
    """Load a benchmark table, auto-detecting cells vs margins mode from the
    header (margins files are exactly `margin,category,population`)."""
    header, rows = _read_rows(path)
    if "population" not in header:
        raise InputError(f"{path}: missing required column 'population'")
    if header == ["margin", "category", "population"]:
        return _load_margins(path, rows)
    return _load_cells(path, header, rows)


def _parse_population(path, rownum: int, raw: str) -> float:
    try:
        n = float(raw)
    except ValueError:
        raise InputError(f"{path}:{rownum}: population {raw!r} is not a number") from None
    if n < 0:
        raise InputError(f"{path}:{rownum}: negative population count {raw!r}")
    return n


def _load_cells(path, header: list[str], rows: list[dict[str, str]]) -> BenchmarkTable:
    dims = tuple(c for c in header if c != "population")
    if not dims:
        raise InputError(f"{path}: cells file needs at least one dimension column")
    cells: dict[tuple[str, ...], float] = {}
    for i, row in enumerate(rows, start=2):
        key = tuple(row[d] for d in dims)
        if key in cells:
            raise InputError(f"{path}:{i}: duplicate cell {key!r}")
        cells[key] = _parse_population(path, i, row["population"])
    total = float(sum(cells.values()))
    if total <= 0:
        raise InputError(f"{path}: benchmark population must be positive")
    return BenchmarkTable(mode="cells", population_total=total, dimensions=dims, cells=cells)


def _load_margins(path, rows: list[dict[str, str]]) -> BenchmarkTable:
    by_margin: dict[str, dict[str, float]] = {}
    for i, row in enumerate(rows, start=2):
        name, cat = row["margin"], row["category"]
        if not name or not cat:
            raise InputError(f"{path}:{i}: empty margin or category")
        counts = by_margin.setdefault(name, {})
        if cat in counts:
            raise InputError(f"{path}:{i}: duplicate category {cat!r} in margin {name!r}")
        counts[cat] = _parse_population(path, i, row["population"])
    if not by_margin:
        raise InputError(f"{path}: no margin rows")
    margins = tuple(Margin(name=n, counts=c) for n, c in by_margin.items())
    total = margins[0].total
    if total <= 0:
        raise InputError(f"{path}: benchmark population must be positive")
    # BenchmarkTable.__post_init__ enforces the common-total invariant, but
    # report the two totals explicitly for a clearer message.
    for m in margins[1:]:
        if abs(m.total - total) > 1e-9 * total:
            raise InputError(
                f"{path}: margin {m.name!r} sums to {m.total!r} but margin "
                f"{margins[0].name!r} sums to {total!r}"
            )
    return BenchmarkTable(mode="margins", population_total=total, margins=margins)


def write_benchmarks(table: BenchmarkTable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if table.mode == "cells":
            writer.writerow([*table.dimensions, "population"])
            for key, n in table.cells.items():
                writer.writerow([*key, _fmt(n)])
        else:
            writer.writerow(["margin", "category", "population"])
            for m in table.margins:
                for cat, n in m.counts.items():
                    writer.writerow([m.name, cat, _fmt(n)])


def load_weights(path: str | Path) -> WeightVector:
    header, rows = _read_rows(path)
    _check_columns(path, header, ["respondent_id", "weight", "stage"])
    if not rows:
        raise InputError(f"{path}: empty weights file")
    stages = {row["stage"] for row in rows}
    if len(stages) != 1:
        raise InputError(f"{path}: mixed weight stages {sorted(stages)}")
    entries: dict[str, float] = {}
    for i, row in enumerate(rows, start=2):
        rid = row["respondent_id"]
        if rid in entries:
            raise InputError(f"{path}:{i}: duplicate respondent_id {rid!r}")
        try:
            entries[rid] = float(row["weight"])
        except ValueError:
            raise InputError(f"{path}:{i}: weight {row['weight']!r} is not a number") from None
    return WeightVector(stage=stages.pop(), entries=entries)


def write_weights(weights: WeightVector, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["respondent_id", "weight", "stage"])
        for rid, w in weights.entries.items():
            writer.writerow([rid, _fmt(w), weights.stage])
