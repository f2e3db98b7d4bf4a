"""Stage 2: adjust weights to population benchmarks.

Two routes: exact post-stratification against fully cross-classified cells,
or raking (iterative proportional fitting) against per-dimension margins.
Benchmark strata without any respondent are omitted and the weights are
scaled to the remaining (represented) population; a final trim-and-rescale
clamps extreme weights and restores the represented total.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import BenchmarkTable, Margin, RespondentRecord, WeightVector
from .errors import CalibrationError, InputError
from .propensity import TrimPolicy, apply_trim

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RakingConfig:
    """Controls for iterative proportional fitting.

    margin_order lists the benchmark margins to rake, in sweep order;
    tolerance is the maximum relative margin error accepted as converged.
    """

    margin_order: tuple[str, ...]
    max_iterations: int = 1000
    tolerance: float = 1e-8
    trim: TrimPolicy = field(default_factory=TrimPolicy)

    def __post_init__(self) -> None:
        if len(set(self.margin_order)) != len(self.margin_order):
            raise InputError("margin_order contains duplicates")
        if not self.margin_order:
            raise InputError("margin_order must name at least one margin")
        if self.max_iterations < 1:
            raise InputError("max_iterations must be positive")
        if not self.tolerance > 0:
            raise InputError("tolerance must be positive")


@dataclass(frozen=True)
class OmittedStratum:
    """A benchmark stratum dropped for lack of respondents."""

    margin: str  # margin name, or "cell" for cells-mode strata
    category: str
    population: float


@dataclass
class CalibrationReport:
    omitted_strata: list[OmittedStratum]
    achieved_margin_error: float
    iterations_used: int
    trimmed_low_count: int
    trimmed_high_count: int
    final_weight_sum: float
    converged: bool = True

    def as_dict(self) -> dict:
        return {
            "omitted_strata": [
                {"margin": s.margin, "category": s.category, "population": s.population}
                for s in self.omitted_strata
            ],
            "achieved_margin_error": self.achieved_margin_error,
            "iterations_used": self.iterations_used,
            "trimmed_low_count": self.trimmed_low_count,
            "trimmed_high_count": self.trimmed_high_count,
            "final_weight_sum": self.final_weight_sum,
            "converged": self.converged,
        }


def trim_and_rescale(
    weights: WeightVector, policy: TrimPolicy, target: float | None = None
) -> WeightVector:
    """Clamp weights to [mean/lower_divisor, mean*upper_multiplier] of their
    mean, then rescale so the clamped weights sum to target.

    target falls back to policy.rescale_target when omitted.
    """
    if target is None:
        target = policy.rescale_target
    if target is None or not target > 0:
        raise InputError(f"rescale target must be positive, got {target!r}")
    if not weights.entries:
        raise InputError("cannot trim an empty weight vector")
    out, _, _, _ = _trim_and_rescale_array(
        np.fromiter(weights.entries.values(), dtype=float, count=len(weights.entries)),
        policy,
        target,
    )
    return WeightVector(stage="final", entries=dict(zip(weights.entries.keys(), out.tolist())))


def _trim_and_rescale_array(
    w: np.ndarray, policy: TrimPolicy, target: float
) -> tuple[np.ndarray, int, int, float]:
    clamped, low, high = apply_trim(w, policy)
    scale = target / float(np.sum(clamped))
    return clamped * scale, low, high, scale


def _records_by_id(
    weights: WeightVector, respondents: Sequence[RespondentRecord]
) -> list[RespondentRecord]:
    by_id = {r.respondent_id: r for r in respondents}
    ordered = []
    for rid in weights.entries:
        try:
            ordered.append(by_id[rid])
        except KeyError:
            raise InputError(f"weight entry {rid!r} has no respondent record") from None
    return ordered


def post_stratify(
    weights: WeightVector,
    respondents: Sequence[RespondentRecord],
    benchmarks: BenchmarkTable,
    trim: TrimPolicy | None = None,
) -> tuple[WeightVector, CalibrationReport]:
    """Exact calibration: within each benchmark cell, scale weights so the
    weighted total equals the cell's population count.

    Cells with population but no respondents are omitted and reported; the
    trim-and-rescale target is the represented population (total minus
    omitted).
    """
    if benchmarks.mode != "cells":
        raise InputError("post_stratify needs a cells-mode benchmark table")
    trim = trim or TrimPolicy()
    records = _records_by_id(weights, respondents)
    ids = list(weights.entries.keys())
    w = np.fromiter(weights.entries.values(), dtype=float, count=len(ids))

    cell_keys = [r.cell_key(benchmarks.dimensions) for r in records]
    occupied: dict[tuple[str, ...], list[int]] = {}
    for i, key in enumerate(cell_keys):
        occupied.setdefault(key, []).append(i)

    new_w = np.empty_like(w)
    max_err = 0.0
    for key, idx in occupied.items():
        if key not in benchmarks.cells:
            raise CalibrationError(f"respondents fall in cell {key!r} absent from the benchmark table")
        pop = benchmarks.cells[key]
        if pop <= 0:
            raise CalibrationError(f"cell {key!r} has respondents but zero benchmark population")
        idx = np.asarray(idx)
        cell_total = float(np.sum(w[idx]))
        new_w[idx] = w[idx] * (pop / cell_total)
        max_err = max(max_err, abs(float(np.sum(new_w[idx])) - pop) / pop)

    omitted = [
        OmittedStratum(margin="cell", category="|".join(key), population=pop)
        for key, pop in benchmarks.cells.items()
        if pop > 0 and key not in occupied
    ]
    represented = benchmarks.population_total - sum(s.population for s in omitted)
    target = trim.rescale_target if trim.rescale_target is not None else represented

    final, low, high, _ = _trim_and_rescale_array(new_w, trim, target)
    final_vec = WeightVector(stage="final", entries=dict(zip(ids, final.tolist())))
    report = CalibrationReport(
        omitted_strata=omitted,
        achieved_margin_error=max_err,
        iterations_used=1,
        trimmed_low_count=low,
        trimmed_high_count=high,
        final_weight_sum=float(np.sum(final)),
        converged=True,
    )
    return final_vec, report


def _margin_codes(
    records: Sequence[RespondentRecord], margin: Margin, retained: list[str]
) -> np.ndarray:
    index = {cat: k for k, cat in enumerate(retained)}
    codes = np.empty(len(records), dtype=np.intp)
    variables = margin.variables
    for i, r in enumerate(records):
        cat = r.margin_category(variables)
        try:
            codes[i] = index[cat]
        except KeyError:
            raise CalibrationError(
                f"respondent {r.respondent_id!r}: category {cat!r} absent from margin {margin.name!r}"
            ) from None
    return codes


def rake(
    weights: WeightVector,
    respondents: Sequence[RespondentRecord],
    benchmarks: BenchmarkTable,
    config: RakingConfig,
) -> tuple[WeightVector, CalibrationReport]:
    """Iterative proportional fitting against the configured margins.

    Margin categories without respondents are dropped from every margin
    before iterating; each margin's remaining counts are renormalized to the
    smallest represented population across margins (intersection semantics)
    so all margins share a common total. IPF then cycles through the margins
    in order until the maximum relative margin error drops below tolerance
    or max_iterations is reached; non-convergence is flagged in the report,
    not raised. Trim-and-rescale to the represented population follows.
    """
    if benchmarks.mode != "margins":
        raise InputError("rake needs a margins-mode benchmark table")
    records = _records_by_id(weights, respondents)
    ids = list(weights.entries.keys())
    w = np.fromiter(weights.entries.values(), dtype=float, count=len(ids))

    margins = [benchmarks.margin(name) for name in config.margin_order]

    omitted: list[OmittedStratum] = []
    retained_cats: list[list[str]] = []
    codes_per_margin: list[np.ndarray] = []
    represented_per_margin: list[float] = []
    for margin in margins:
        observed = set()
        variables = margin.variables
        for r in records:
            observed.add(r.margin_category(variables))
        unknown = observed - set(margin.counts.keys())
        if unknown:
            raise CalibrationError(
                f"respondents fall in categories {sorted(unknown)!r} absent from margin {margin.name!r}"
            )
        retained = [cat for cat in margin.counts if cat in observed]
        for cat, pop in margin.counts.items():
            if cat not in observed and pop > 0:
                omitted.append(OmittedStratum(margin=margin.name, category=cat, population=pop))
        zero_pop = [cat for cat in retained if margin.counts[cat] <= 0]
        if zero_pop:
            raise CalibrationError(
                f"margin {margin.name!r}: categories {zero_pop!r} have respondents but zero population"
            )
        retained_cats.append(retained)
        codes_per_margin.append(_margin_codes(records, margin, retained))
        represented_per_margin.append(float(sum(margin.counts[cat] for cat in retained)))

    represented = min(represented_per_margin)
    targets: list[np.ndarray] = []
    for margin, retained, rep in zip(margins, retained_cats, represented_per_margin):
        counts = np.array([margin.counts[cat] for cat in retained])
        targets.append(counts * (represented / rep))

    def margin_error(current: np.ndarray) -> float:
        err = 0.0
        for codes, target, retained in zip(codes_per_margin, targets, retained_cats):
            totals = np.bincount(codes, weights=current, minlength=len(retained))
            err = max(err, float(np.max(np.abs(totals - target) / target)))
        return err

    err = margin_error(w)
    iterations = 0
    while err >= config.tolerance and iterations < config.max_iterations:
        for codes, target, retained in zip(codes_per_margin, targets, retained_cats):
            totals = np.bincount(codes, weights=w, minlength=len(retained))
            w = w * (target / totals)[codes]
        iterations += 1
        err = margin_error(w)
    converged = err < config.tolerance
    if not converged:
        logger.warning(
            "raking stopped at max_iterations=%d with margin error %.3e",
            config.max_iterations,
            err,
        )

    target_total = (
        config.trim.rescale_target if config.trim.rescale_target is not None else represented
    )
    final, low, high, _ = _trim_and_rescale_array(w, config.trim, target_total)
    final_vec = WeightVector(stage="final", entries=dict(zip(ids, final.tolist())))
    report = CalibrationReport(
        omitted_strata=omitted,
        achieved_margin_error=err,
        iterations_used=iterations,
        trimmed_low_count=low,
        trimmed_high_count=high,
        final_weight_sum=float(np.sum(final)),
        converged=converged,
    )
    return final_vec, report


def write_report(report: CalibrationReport, path) -> None:
    """Write a calibration report as a stable key-value YAML file."""
    import yaml

    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(report.as_dict(), fh, sort_keys=True)


def read_report(path) -> dict:
    import yaml

    with open(path, "r", encoding="utf-8") as fh:
        return yaml.safe_load(fh)
