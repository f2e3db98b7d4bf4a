"""Core data model: covariate schema, respondent/frame records, benchmark
tables and weight vectors.

Continuous covariates are bucketized at ingestion, so everything downstream
of this module sees categorical data only. All types are immutable after
construction and safe to share across concurrent pipeline runs.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import InputError

VALID_KINDS = ("categorical", "continuous")

#: Character joining the covariate names of a joint margin ("age*gender").
MARGIN_NAME_SEP = "*"
#: Character joining category values inside a joint margin ("18-24|female").
MARGIN_VALUE_SEP = "|"
#: Reserved field name referring to RespondentRecord.region / FrameUnit.region.
REGION_FIELD = "region"


@dataclass(frozen=True)
class CovariateSpec:
    """One covariate: either a categorical variable with explicit levels or a
    continuous variable cut into buckets.

    Buckets are half-open intervals [edge_i, edge_{i+1}); values below the
    first edge fall in the lowest bucket and values at or above the last edge
    fall in the (closed) top bucket, so a top label like "65+" is inclusive.
    """

    name: str
    kind: str
    levels: tuple[str, ...] = ()
    bucket_edges: tuple[float, ...] = ()
    bucket_labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.name:
            raise InputError("covariate name must be non-empty")
        if self.kind not in VALID_KINDS:
            raise InputError(f"covariate {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.levels:
                raise InputError(f"covariate {self.name!r}: categorical levels must be non-empty")
            if len(set(self.levels)) != len(self.levels):
                raise InputError(f"covariate {self.name!r}: duplicate levels")
            if any(not lv for lv in self.levels):
                raise InputError(f"covariate {self.name!r}: empty level label")
            if self.bucket_edges or self.bucket_labels:
                raise InputError(f"covariate {self.name!r}: bucket fields on a categorical covariate")
        else:
            if not self.bucket_edges:
                raise InputError(f"covariate {self.name!r}: continuous covariate needs bucket_edges")
            if any(b <= a for a, b in zip(self.bucket_edges, self.bucket_edges[1:])):
                raise InputError(f"covariate {self.name!r}: bucket_edges must be strictly increasing")
            labels = self.bucket_labels or _default_bucket_labels(self.bucket_edges)
            if len(labels) != len(self.bucket_edges) + 1:
                raise InputError(
                    f"covariate {self.name!r}: need {len(self.bucket_edges) + 1} bucket labels, "
                    f"got {len(labels)}"
                )
            if len(set(labels)) != len(labels):
                raise InputError(f"covariate {self.name!r}: duplicate bucket labels")
            object.__setattr__(self, "bucket_labels", tuple(labels))
            if self.levels:
                raise InputError(f"covariate {self.name!r}: levels field on a continuous covariate")

    @property
    def category_levels(self) -> tuple[str, ...]:
        """Category labels this covariate can take after bucketing."""
        return self.levels if self.kind == "categorical" else self.bucket_labels


def _default_bucket_labels(edges: tuple[float, ...]) -> tuple[str, ...]:
    def fmt(x: float) -> str:
        return f"{x:g}"

    inner = [f"{fmt(a)}-<{fmt(b)}" for a, b in zip(edges, edges[1:])]
    return tuple([f"<{fmt(edges[0])}"] + inner + [f"{fmt(edges[-1])}+"])


@dataclass(frozen=True)
class CovariateSchema:
    """Ordered collection of covariate specs with unique names."""

    covariates: tuple[CovariateSpec, ...]

    def __post_init__(self) -> None:
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise InputError("covariate names must be unique within a schema")
        if REGION_FIELD in names:
            raise InputError(f"{REGION_FIELD!r} is a reserved field name, not a covariate")

    def __iter__(self):
        return iter(self.covariates)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.covariates)

    def spec(self, name: str) -> CovariateSpec:
        for c in self.covariates:
            if c.name == name:
                return c
        raise InputError(f"unknown covariate {name!r}")


def bucketize(raw_value: float, spec: CovariateSpec) -> str:
    """Map a raw continuous value to its bucket label.

    Intervals are half-open [lo, hi); the top bucket is closed above, so any
    value at or past the last edge lands there.
    """
    if spec.kind != "continuous":
        raise InputError(f"covariate {spec.name!r} is not continuous")
    if not math.isfinite(raw_value):
        raise InputError(f"covariate {spec.name!r}: non-finite value {raw_value!r}")
    return spec.bucket_labels[bisect_right(spec.bucket_edges, raw_value)]


@dataclass(frozen=True)
class RespondentRecord:
    """One survey respondent in a daily cross-section.

    covariate_values hold post-bucketing category labels; outcomes hold the
    numeric survey outcomes keyed by outcome name.
    """

    respondent_id: str
    region: str
    covariate_values: Mapping[str, str]
    outcomes: Mapping[str, float]
    answered_count: int

    def __post_init__(self) -> None:
        if self.answered_count < 0:
            raise InputError(f"respondent {self.respondent_id!r}: negative answered_count")

    def margin_category(self, variables: tuple[str, ...]) -> str:
        """Category key of this respondent for a (possibly joint) margin."""
        parts = []
        for var in variables:
            if var == REGION_FIELD:
                parts.append(self.region)
            else:
                try:
                    parts.append(self.covariate_values[var])
                except KeyError:
                    raise InputError(
                        f"respondent {self.respondent_id!r} has no value for covariate {var!r}"
                    ) from None
        return MARGIN_VALUE_SEP.join(parts)

    def cell_key(self, dimensions: tuple[str, ...]) -> tuple[str, ...]:
        """Cross-classification key of this respondent for cells-mode benchmarks."""
        return tuple(
            self.region if d == REGION_FIELD else self.covariate_values[d] for d in dimensions
        )


@dataclass(frozen=True)
class FrameUnit:
    """One member of the sampling frame; input to propensity fitting."""

    unit_id: str
    region: str
    covariate_values: Mapping[str, str]
    sampled: bool
    responded: bool

    def __post_init__(self) -> None:
        if self.responded and not self.sampled:
            raise InputError(f"frame unit {self.unit_id!r}: responded implies sampled")


@dataclass(frozen=True)
class Margin:
    """One raking target: population counts per category of a (joint) margin.

    The margin name encodes its variables, joined by '*': "region",
    "age*gender". Joint category keys join the values with '|'.
    """

    name: str
    counts: Mapping[str, float]

    def __post_init__(self) -> None:
        if not self.counts:
            raise InputError(f"margin {self.name!r} has no categories")
        for cat, n in self.counts.items():
            if not math.isfinite(n) or n < 0:
                raise InputError(f"margin {self.name!r}, category {cat!r}: invalid count {n!r}")

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(self.name.split(MARGIN_NAME_SEP))

    @property
    def total(self) -> float:
        return float(sum(self.counts.values()))


RELATIVE_TOTAL_TOL = 1e-9


@dataclass(frozen=True)
class BenchmarkTable:
    """Population benchmarks, either full cross-classified cells or
    per-dimension margins.

    cells mode: `dimensions` names the classification fields (the reserved
    name "region" refers to the record's region) and `cells` maps value
    tuples to population counts. margins mode: `margins` is an ordered tuple
    of Margin whose counts each sum to population_total within 1e-9 relative
    tolerance.
    """

    mode: str
    population_total: float
    dimensions: tuple[str, ...] = ()
    cells: Mapping[tuple[str, ...], float] = field(default_factory=dict)
    margins: tuple[Margin, ...] = ()

    def __post_init__(self) -> None:
        if self.mode not in ("cells", "margins"):
            raise InputError(f"unknown benchmark mode {self.mode!r}")
        if not (math.isfinite(self.population_total) and self.population_total > 0):
            raise InputError(f"population_total must be positive, got {self.population_total!r}")
        if self.mode == "cells":
            if not self.dimensions or not self.cells:
                raise InputError("cells-mode benchmark needs dimensions and cells")
            for key, n in self.cells.items():
                if len(key) != len(self.dimensions):
                    raise InputError(f"cell {key!r} does not match dimensions {self.dimensions!r}")
                if not math.isfinite(n) or n < 0:
                    raise InputError(f"cell {key!r}: invalid population count {n!r}")
            total = float(sum(self.cells.values()))
            if abs(total - self.population_total) > RELATIVE_TOTAL_TOL * self.population_total:
                raise InputError(
                    f"cell counts sum to {total!r}, expected population_total {self.population_total!r}"
                )
        else:
            if not self.margins:
                raise InputError("margins-mode benchmark needs at least one margin")
            names = [m.name for m in self.margins]
            if len(set(names)) != len(names):
                raise InputError("margin names must be distinct")
            for m in self.margins:
                if abs(m.total - self.population_total) > RELATIVE_TOTAL_TOL * self.population_total:
                    raise InputError(
                        f"margin {m.name!r} sums to {m.total!r}, expected population_total "
                        f"{self.population_total!r}"
                    )

    def margin(self, name: str) -> Margin:
        for m in self.margins:
            if m.name == name:
                return m
        raise InputError(f"benchmark table has no margin {name!r}")


WEIGHT_STAGES = ("ipsw", "final")


@dataclass(frozen=True)
class WeightVector:
    """respondent_id -> strictly positive finite weight, tagged with the
    pipeline stage that produced it.

    For stage="final" the calibration ops guarantee that the weights sum to
    the benchmark population minus any omitted-stratum population.
    """

    stage: str
    entries: Mapping[str, float]

    def __post_init__(self) -> None:
        if self.stage not in WEIGHT_STAGES:
            raise InputError(f"unknown weight stage {self.stage!r}")
        for rid, w in self.entries.items():
            if not math.isfinite(w) or w <= 0:
                raise InputError(f"respondent {rid!r}: weight must be positive finite, got {w!r}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def total(self) -> float:
        return float(sum(self.entries.values()))


def filter_eligible(records: list[RespondentRecord], min_answered: int = 2) -> list[RespondentRecord]:
    """Keep respondents who answered at least min_answered questions,
    preserving input order."""
    if min_answered < 0:
        raise InputError(f"min_answered must be >= 0, got {min_answered}")
    return [r for r in records if r.answered_count >= min_answered]


def validate_record_values(
    covariate_values: Mapping[str, str], schema: CovariateSchema
) -> str | None:
    """Return an error message if covariate_values do not carry exactly one
    declared category per schema covariate, else None."""
    for spec in schema:
        value = covariate_values.get(spec.name)
        if value is None:
            return f"missing covariate {spec.name!r}"
        if value not in spec.category_levels:
            return f"unknown level {value!r} for covariate {spec.name!r}"
    extra = set(covariate_values) - set(schema.names)
    if extra:
        return f"undeclared covariates {sorted(extra)!r}"
    return None


def margin_categories(
    records: Iterable[RespondentRecord], margin: Margin
) -> list[str]:
    """Category key per record for the given margin, in record order."""
    variables = margin.variables
    return [r.margin_category(variables) for r in records]
