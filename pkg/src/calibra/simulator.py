"""Monte-Carlo harness: synthetic population with known truth, a
coverage-limited frame, covariate-driven nonresponse, stratified daily
samples with per-region inclusion probabilities and resampling cooldowns,
and a replication loop that scores the weighting pipeline against the truth.

The three representation errors are generated explicitly: coverage (frame
membership is a logistic function of covariates), random sampling
(stratified Bernoulli sampling by region), and nonresponse (response is a
logistic function of covariates, missing-at-random by construction; an
optional not-missing-at-random term adds direct outcome dependence to
demonstrate residual bias).

All randomness derives from (config.seed, stream, replication, day) so any
run is reproducible bit for bit. The population lives in numpy arrays;
record objects are materialized only for the sampled units that enter the
weighting pipeline.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .calibration import RakingConfig, post_stratify, rake
from .core import (
    REGION_FIELD,
    BenchmarkTable,
    CovariateSchema,
    CovariateSpec,
    FrameUnit,
    Margin,
    MARGIN_NAME_SEP,
    MARGIN_VALUE_SEP,
    RespondentRecord,
    WeightVector,
    filter_eligible,
)
from .errors import CalibraError, DegenerateFitError, InputError
from .estimation import design_effect, estimate_mean, outcome_column
from .propensity import TrimPolicy, fit_propensity, ipsw_weights

logger = logging.getLogger(__name__)

STREAM_POPULATION = 1
STREAM_SAMPLING = 2
STREAM_RESPONSE = 3

DENSITY_CLASSES = ("low", "high")
# The generator models no item nonresponse: every respondent answers the
# whole instrument (the outcome questions plus two screener items).
SCREENER_QUESTIONS = 2


@dataclass(frozen=True)
class RegionSpec:
    name: str
    share: float
    density: str = "low"


@dataclass(frozen=True)
class CategoricalGenerator:
    """Sampling distribution of one categorical covariate, optionally
    region-dependent."""

    name: str
    levels: tuple[str, ...]
    probs: tuple[float, ...]
    probs_by_region: Mapping[str, tuple[float, ...]] | None = None


@dataclass(frozen=True)
class LogisticModelSpec:
    """intercept + sum of per-level coefficients, squashed through a
    logistic. Coefficient keys are (field, level) where field is a covariate
    name or the reserved "region"."""

    intercept: float
    coefficients: Mapping[tuple[str, str], float] = field(default_factory=dict)


@dataclass(frozen=True)
class ResponseModelSpec(LogisticModelSpec):
    """Response model; nmar_outcome/nmar_coefficient add a direct dependence
    on a realized outcome (not-missing-at-random), which the weighting
    pipeline is not expected to correct."""

    nmar_outcome: str | None = None
    nmar_coefficient: float = 0.0


@dataclass(frozen=True)
class OutcomeModelSpec:
    """Linear outcome model with gaussian noise; with binary_threshold set
    the emitted outcome is the indicator of the latent value exceeding the
    threshold."""

    name: str
    intercept: float
    coefficients: Mapping[tuple[str, str], float] = field(default_factory=dict)
    noise_sd: float = 1.0
    binary_threshold: float | None = None


@dataclass(frozen=True)
class SimConfig:
    seed: int
    population_size: int
    regions: tuple[RegionSpec, ...]
    covariates: tuple[CategoricalGenerator, ...]
    frame_coverage_model: LogisticModelSpec
    response_model: ResponseModelSpec
    outcome_models: tuple[OutcomeModelSpec, ...]
    inclusion_probabilities: Mapping[str, float] | None = None
    base_inclusion_probability: float = 0.05
    cooldown_days: Mapping[str, int] = field(default_factory=lambda: {"low": 30, "high": 90})
    n_days: int = 1
    replications: int = 1
    min_answered: int = 2
    l2_strength: float = 1.0
    calibration_mode: str = "margins"
    include_region_margin: bool = True
    use_design_weights: bool = False
    benchmark_covariates: tuple[str, ...] | None = None
    trim: TrimPolicy = field(default_factory=TrimPolicy)
    alpha_multiplier: float = 1.96

    def __post_init__(self) -> None:
        _validate_config(self)

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(g.name for g in self.covariates)

    @property
    def outcome_names(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.outcome_models)

    def bench_covariates(self) -> tuple[str, ...]:
        return self.benchmark_covariates or self.covariate_names

    def inclusion_probability(self, region: RegionSpec) -> float:
        """Per-region sampling fraction; defaults oversample small regions
        by inverting the population shares around base_inclusion_probability."""
        if self.inclusion_probabilities is not None:
            return self.inclusion_probabilities[region.name]
        mean_share = 1.0 / len(self.regions)
        return min(1.0, self.base_inclusion_probability * mean_share / region.share)


def _check_prob_vector(name: str, levels: Sequence[str], probs: Sequence[float]) -> None:
    if len(probs) != len(levels):
        raise InputError(f"{name}: {len(levels)} levels but {len(probs)} probabilities")
    if any(not 0 < p < 1 for p in probs):
        raise InputError(f"{name}: category probabilities must lie strictly in (0,1)")
    if abs(sum(probs) - 1.0) > 1e-9:
        raise InputError(f"{name}: category probabilities sum to {sum(probs)!r}, not 1")


def _check_coefficients(
    what: str, coefficients: Mapping[tuple[str, str], float], config: SimConfig
) -> None:
    region_names = {r.name for r in config.regions}
    levels = {g.name: set(g.levels) for g in config.covariates}
    for (fieldname, level), coef in coefficients.items():
        if not math.isfinite(coef):
            raise InputError(f"{what}: non-finite coefficient for {fieldname}:{level}")
        if fieldname == REGION_FIELD:
            if level not in region_names:
                raise InputError(f"{what}: unknown region {level!r}")
        elif fieldname not in levels:
            raise InputError(f"{what}: unknown covariate {fieldname!r}")
        elif level not in levels[fieldname]:
            raise InputError(f"{what}: unknown level {level!r} for covariate {fieldname!r}")


def _validate_config(config: SimConfig) -> None:
    if config.seed < 0:
        raise InputError("seed must be a nonnegative integer")
    if config.population_size < 1:
        raise InputError("population_size must be positive")
    if config.replications < 1:
        raise InputError(f"replications must be >= 1, got {config.replications}")
    if config.n_days < 1:
        raise InputError("n_days must be >= 1")
    if config.min_answered < 0:
        raise InputError("min_answered must be >= 0")
    if not config.regions:
        raise InputError("at least one region required")
    names = [r.name for r in config.regions]
    if len(set(names)) != len(names):
        raise InputError("region names must be unique")
    shares = [r.share for r in config.regions]
    if any(not 0 < s < 1 for s in shares) and len(shares) > 1:
        raise InputError("region shares must lie strictly in (0,1)")
    if len(shares) == 1 and shares[0] != 1.0:
        raise InputError("single region must have share 1")
    if abs(sum(shares) - 1.0) > 1e-9:
        raise InputError(f"region shares sum to {sum(shares)!r}, not 1")
    for r in config.regions:
        if r.density not in config.cooldown_days:
            raise InputError(f"region {r.name!r}: no cooldown for density class {r.density!r}")
    for cls, days in config.cooldown_days.items():
        if days < 1:
            raise InputError(f"cooldown for density class {cls!r} must be positive")
    if not config.covariates:
        raise InputError("at least one covariate generator required")
    cov_names = [g.name for g in config.covariates]
    if len(set(cov_names)) != len(cov_names):
        raise InputError("covariate generator names must be unique")
    for g in config.covariates:
        if len(set(g.levels)) != len(g.levels) or not g.levels:
            raise InputError(f"covariate {g.name!r}: levels must be unique and non-empty")
        _check_prob_vector(f"covariate {g.name!r}", g.levels, g.probs)
        if g.probs_by_region is not None:
            missing = {r.name for r in config.regions} - set(g.probs_by_region)
            if missing:
                raise InputError(f"covariate {g.name!r}: missing region probabilities {sorted(missing)}")
            for region_name, probs in g.probs_by_region.items():
                _check_prob_vector(f"covariate {g.name!r} in region {region_name!r}", g.levels, probs)
    if config.inclusion_probabilities is not None:
        for r in config.regions:
            p = config.inclusion_probabilities.get(r.name)
            if p is None:
                raise InputError(f"no inclusion probability for region {r.name!r}")
            if not 0 < p <= 1:
                raise InputError(f"region {r.name!r}: inclusion probability {p!r} outside (0,1]")
    if not 0 < config.base_inclusion_probability <= 1:
        raise InputError("base_inclusion_probability must lie in (0,1]")
    _check_coefficients("frame_coverage_model", config.frame_coverage_model.coefficients, config)
    _check_coefficients("response_model", config.response_model.coefficients, config)
    out_names = [m.name for m in config.outcome_models]
    if not out_names or len(set(out_names)) != len(out_names):
        raise InputError("outcome model names must be non-empty and unique")
    for m in config.outcome_models:
        _check_coefficients(f"outcome_model {m.name!r}", m.coefficients, config)
        if m.noise_sd < 0:
            raise InputError(f"outcome_model {m.name!r}: negative noise_sd")
    nmar = config.response_model.nmar_outcome
    if nmar is not None and nmar not in out_names:
        raise InputError(f"nmar_outcome {nmar!r} is not a declared outcome")
    if config.calibration_mode not in ("cells", "margins"):
        raise InputError(f"unknown calibration_mode {config.calibration_mode!r}")
    for name in config.bench_covariates():
        if name not in cov_names:
            raise InputError(f"benchmark covariate {name!r} is not a declared covariate")
    if config.l2_strength < 0:
        raise InputError("l2_strength must be >= 0")


@dataclass
class Population:
    """Realized synthetic population, column-oriented."""

    region_names: tuple[str, ...]
    covariate_levels: dict[str, tuple[str, ...]]
    regions: np.ndarray  # int codes into region_names
    covariates: dict[str, np.ndarray]  # int codes into covariate_levels
    in_frame: np.ndarray  # bool
    outcomes: dict[str, np.ndarray]  # float

    @property
    def size(self) -> int:
        return self.regions.shape[0]


@dataclass
class SimTruth:
    """Ground truth computed from the realized population."""

    true_means: dict[str, float]
    true_totals: dict[str, float]
    true_region_ratios: dict[str, dict[str, float]]
    stratum_counts: dict[tuple[str, ...], float]


def schema_from_config(config: SimConfig) -> CovariateSchema:
    return CovariateSchema(
        covariates=tuple(
            CovariateSpec(name=g.name, kind="categorical", levels=g.levels)
            for g in config.covariates
        )
    )


def _linear_predictor(population: Population, intercept: float, coefficients) -> np.ndarray:
    eta = np.full(population.size, float(intercept))
    for (fieldname, level), coef in coefficients.items():
        if fieldname == REGION_FIELD:
            k = population.region_names.index(level)
            eta += coef * (population.regions == k)
        else:
            k = population.covariate_levels[fieldname].index(level)
            eta += coef * (population.covariates[fieldname] == k)
    return eta


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ez = np.exp(eta[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def generate_population(
    config: SimConfig, replication: int = 0
) -> tuple[Population, SimTruth, dict[str, BenchmarkTable]]:
    """Draw one population realization plus its truth and benchmark tables.

    Deterministic under (config.seed, replication): running twice yields
    byte-identical arrays. The returned dict carries both a "cells" and a
    "margins" benchmark table computed from the realized population.
    """
    rng = np.random.default_rng([config.seed, STREAM_POPULATION, replication])
    n = config.population_size
    region_names = tuple(r.name for r in config.regions)
    shares = np.array([r.share for r in config.regions])
    regions = rng.choice(len(region_names), size=n, p=shares / shares.sum())

    covariates: dict[str, np.ndarray] = {}
    covariate_levels: dict[str, tuple[str, ...]] = {}
    for g in config.covariates:
        covariate_levels[g.name] = g.levels
        if g.probs_by_region is None:
            covariates[g.name] = rng.choice(len(g.levels), size=n, p=np.array(g.probs))
        else:
            codes = np.empty(n, dtype=np.int64)
            for k, name in enumerate(region_names):
                mask = regions == k
                codes[mask] = rng.choice(
                    len(g.levels), size=int(mask.sum()), p=np.array(g.probs_by_region[name])
                )
            covariates[g.name] = codes

    population = Population(
        region_names=region_names,
        covariate_levels=covariate_levels,
        regions=regions,
        covariates=covariates,
        in_frame=np.ones(n, dtype=bool),
        outcomes={},
    )

    coverage = _sigmoid(
        _linear_predictor(
            population, config.frame_coverage_model.intercept, config.frame_coverage_model.coefficients
        )
    )
    population.in_frame = rng.random(n) < coverage

    for m in config.outcome_models:
        latent = _linear_predictor(population, m.intercept, m.coefficients)
        latent = latent + rng.normal(0.0, m.noise_sd, size=n)
        if m.binary_threshold is None:
            population.outcomes[m.name] = latent
        else:
            population.outcomes[m.name] = (latent > m.binary_threshold).astype(float)

    truth = _compute_truth(config, population)
    benchmarks = _compute_benchmarks(config, population)
    return population, truth, benchmarks


def _compute_truth(config: SimConfig, population: Population) -> SimTruth:
    n = float(population.size)
    means = {name: float(np.sum(y)) / n for name, y in population.outcomes.items()}
    totals = {name: float(np.sum(y)) for name, y in population.outcomes.items()}
    region_ratios: dict[str, dict[str, float]] = {}
    for name, y in population.outcomes.items():
        per_region = {}
        for k, rname in enumerate(population.region_names):
            mask = population.regions == k
            count = int(mask.sum())
            if count:
                per_region[rname] = float(np.sum(y[mask])) / count
        region_ratios[name] = per_region
    strata = _stratum_counts(config, population)
    return SimTruth(
        true_means=means,
        true_totals=totals,
        true_region_ratios=region_ratios,
        stratum_counts=strata,
    )


def _stratum_counts(config: SimConfig, population: Population) -> dict[tuple[str, ...], float]:
    bench = config.bench_covariates()
    sizes = [len(population.region_names)] + [len(population.covariate_levels[c]) for c in bench]
    code = population.regions.astype(np.int64)
    for c in bench:
        code = code * len(population.covariate_levels[c]) + population.covariates[c]
    counts = np.bincount(code, minlength=int(np.prod(sizes)))
    out: dict[tuple[str, ...], float] = {}
    for flat, count in enumerate(counts):
        if count == 0:
            continue
        key = []
        rem = flat
        for size in reversed(sizes[1:]):
            rem, k = divmod(rem, size)
            key.append(k)
        key.append(rem)
        key.reverse()
        labels = [population.region_names[key[0]]]
        labels += [population.covariate_levels[c][key[1 + j]] for j, c in enumerate(bench)]
        out[tuple(labels)] = float(count)
    return out


def _compute_benchmarks(config: SimConfig, population: Population) -> dict[str, BenchmarkTable]:
    strata = _stratum_counts(config, population)
    total = float(population.size)
    bench = config.bench_covariates()
    dims = (REGION_FIELD, *bench)
    cells_table = BenchmarkTable(
        mode="cells", population_total=total, dimensions=dims, cells=strata
    )

    region_counts = np.bincount(population.regions, minlength=len(population.region_names))
    region_margin = Margin(
        name=REGION_FIELD,
        counts={
            name: float(c)
            for name, c in zip(population.region_names, region_counts)
            if c > 0
        },
    )
    joint_counts: dict[str, float] = {}
    for key, count in strata.items():
        cat = MARGIN_VALUE_SEP.join(key[1:])
        joint_counts[cat] = joint_counts.get(cat, 0.0) + count
    joint_margin = Margin(name=MARGIN_NAME_SEP.join(bench), counts=joint_counts)
    margins_table = BenchmarkTable(
        mode="margins", population_total=total, margins=(region_margin, joint_margin)
    )
    return {"cells": cells_table, "margins": margins_table}


@dataclass(frozen=True)
class SamplingDesign:
    """Per-region Bernoulli inclusion probabilities and cooldown durations."""

    seed: int
    inclusion_by_region: Mapping[str, float]
    cooldown_by_region: Mapping[str, int]

    @classmethod
    def from_config(cls, config: SimConfig) -> "SamplingDesign":
        return cls(
            seed=config.seed,
            inclusion_by_region={r.name: config.inclusion_probability(r) for r in config.regions},
            cooldown_by_region={r.name: config.cooldown_days[r.density] for r in config.regions},
        )


def draw_daily_sample(
    population: Population,
    day: int,
    design: SamplingDesign,
    cooldown_state: np.ndarray | None = None,
    replication: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Stratified Bernoulli sample of eligible frame units for one day.

    cooldown_state[i] is the first day unit i may be sampled again; sampled
    units become eligible again cooldown days later. Deterministic under
    (design.seed, replication, day). Returns (sorted sampled indices,
    updated state).
    """
    if day < 0:
        raise InputError("day must be >= 0")
    if cooldown_state is None:
        cooldown_state = np.zeros(population.size, dtype=np.int64)
    state = cooldown_state.copy()
    rng = np.random.default_rng([design.seed, STREAM_SAMPLING, replication, day])
    eligible = population.in_frame & (state <= day)
    chosen: list[np.ndarray] = []
    for k, name in enumerate(population.region_names):
        idx = np.flatnonzero(eligible & (population.regions == k))
        if idx.size == 0:
            logger.warning("region %s: no eligible frame units on day %d", name, day)
            continue
        p = design.inclusion_by_region[name]
        taken = idx[rng.random(idx.size) < p]
        if taken.size:
            state[taken] = day + design.cooldown_by_region[name]
            chosen.append(taken)
    if not chosen:
        return np.empty(0, dtype=np.int64), state
    sampled = np.sort(np.concatenate(chosen))
    return sampled, state


def simulate_response(
    population: Population,
    sampled: np.ndarray,
    model: ResponseModelSpec,
    seed: int,
    replication: int = 0,
    day: int = 0,
) -> np.ndarray:
    """Indices of sampled units that respond; each responds independently
    with its model probability."""
    rng = np.random.default_rng([seed, STREAM_RESPONSE, replication, day])
    eta = _linear_predictor(population, model.intercept, model.coefficients)[sampled]
    if model.nmar_outcome is not None:
        eta = eta + model.nmar_coefficient * population.outcomes[model.nmar_outcome][sampled]
    return sampled[rng.random(sampled.size) < _sigmoid(eta)]


def build_frame_units(
    population: Population, sampled: np.ndarray, responded: np.ndarray
) -> list[FrameUnit]:
    """Materialize sampled units as frame records for propensity fitting."""
    responded_mask = np.zeros(population.size, dtype=bool)
    responded_mask[responded] = True
    units = []
    cov_names = list(population.covariates.keys())
    for i in sampled.tolist():
        values = {
            c: population.covariate_levels[c][population.covariates[c][i]] for c in cov_names
        }
        units.append(
            FrameUnit(
                unit_id=f"u{i:08d}",
                region=population.region_names[population.regions[i]],
                covariate_values=values,
                sampled=True,
                responded=bool(responded_mask[i]),
            )
        )
    return units


def build_respondents(
    population: Population, responded: np.ndarray, day: int = 0
) -> list[RespondentRecord]:
    """Materialize responders as survey records with fresh respondent ids
    (frame unit identity is not exported)."""
    cov_names = list(population.covariates.keys())
    answered = len(population.outcomes) + SCREENER_QUESTIONS
    records = []
    for j, i in enumerate(responded.tolist()):
        values = {
            c: population.covariate_levels[c][population.covariates[c][i]] for c in cov_names
        }
        outcomes = {name: float(col[i]) for name, col in population.outcomes.items()}
        records.append(
            RespondentRecord(
                respondent_id=f"d{day:02d}-{j:06d}",
                region=population.region_names[population.regions[i]],
                covariate_values=values,
                outcomes=outcomes,
                answered_count=answered,
            )
        )
    return records


@dataclass
class ReplicationRow:
    replication: int
    estimand: str
    method: str
    bias: float
    rmse: float
    ci_covered: float
    design_effect: float


@dataclass
class SummaryRow:
    estimand: str
    method: str
    n_replications: int
    mean_bias: float
    mc_se_bias: float
    rmse: float
    coverage: float
    mean_design_effect: float
    improved_vs_unweighted: float | None


@dataclass
class ReplicationReport:
    rows: list[ReplicationRow]
    summary: list[SummaryRow]
    failures: list[tuple[int, str]]


METHODS = ("unweighted", "ipsw", "final")


def _pipeline_weights(
    config: SimConfig,
    schema: CovariateSchema,
    frame_units: list[FrameUnit],
    respondents: list[RespondentRecord],
    benchmarks: dict[str, BenchmarkTable],
    design: SamplingDesign,
) -> dict[str, WeightVector]:
    """Run the two-stage weighting for one daily cross-section and return
    unweighted / stage-1 / final weight vectors."""
    unit = WeightVector(
        stage="ipsw", entries={r.respondent_id: 1.0 for r in respondents}
    )
    if all(u.responded for u in frame_units):
        # Census limit: with no nonresponders the response propensity is
        # identically 1 and the stage-1 weights are exactly unit weights.
        logger.info("all sampled units responded; stage-1 weights are 1")
        ipsw = unit
    else:
        model = fit_propensity(frame_units, schema, config.l2_strength)
        inclusion = None
        if config.use_design_weights:
            inclusion = {
                r.respondent_id: design.inclusion_by_region[r.region] for r in respondents
            }
        ipsw = ipsw_weights(model, respondents, config.trim, inclusion)

    if config.calibration_mode == "cells":
        final, _ = post_stratify(ipsw, respondents, benchmarks["cells"], config.trim)
    else:
        table = benchmarks["margins"]
        order = tuple(
            m.name
            for m in table.margins
            if config.include_region_margin or m.name != REGION_FIELD
        )
        raking = RakingConfig(margin_order=order, trim=config.trim)
        final, _ = rake(ipsw, respondents, table, raking)
    return {"unweighted": unit, "ipsw": ipsw, "final": final}


def run_replications(config: SimConfig) -> ReplicationReport:
    """Full Monte-Carlo study: per replication, generate a population, draw
    the daily cross-sections, weight them, estimate each outcome mean, and
    score bias / CI coverage / design effect against the known truth.

    Per-replication failures are recorded and skipped, not fatal.
    """
    schema = schema_from_config(config)
    rows: list[ReplicationRow] = []
    failures: list[tuple[int, str]] = []
    for rep in range(config.replications):
        try:
            rows.extend(_run_one_replication(config, schema, rep))
        except CalibraError as exc:
            logger.warning("replication %d failed: %s", rep, exc)
            failures.append((rep, str(exc)))
    summary = _summarize(rows)
    return ReplicationReport(rows=rows, summary=summary, failures=failures)


def _run_one_replication(
    config: SimConfig, schema: CovariateSchema, rep: int
) -> list[ReplicationRow]:
    population, truth, benchmarks = generate_population(config, replication=rep)
    design = SamplingDesign.from_config(config)
    state: np.ndarray | None = None
    errors: dict[tuple[str, str], list[float]] = {}
    covered: dict[tuple[str, str], list[float]] = {}
    deffs: dict[tuple[str, str], list[float]] = {}
    for day in range(config.n_days):
        sampled, state = draw_daily_sample(population, day, design, state, replication=rep)
        responded = simulate_response(
            population, sampled, config.response_model, config.seed, replication=rep, day=day
        )
        if responded.size == 0:
            raise DegenerateFitError(f"day {day}: no responders")
        frame_units = build_frame_units(population, sampled, responded)
        respondents = filter_eligible(build_respondents(population, responded, day), config.min_answered)
        if not respondents:
            raise InputError(f"day {day}: all respondents filtered out")
        weights = _pipeline_weights(config, schema, frame_units, respondents, benchmarks, design)
        for outcome in config.outcome_names:
            column = outcome_column(respondents, outcome)
            target = truth.true_means[outcome]
            for method in METHODS:
                est = estimate_mean(weights[method], column, config.alpha_multiplier)
                key = (f"mean:{outcome}", method)
                errors.setdefault(key, []).append(est.point - target)
                covered.setdefault(key, []).append(
                    1.0 if est.ci_low <= target <= est.ci_high else 0.0
                )
                deffs.setdefault(key, []).append(design_effect(weights[method]))
    rows = []
    for (estimand, method), errs in errors.items():
        arr = np.asarray(errs)
        rows.append(
            ReplicationRow(
                replication=rep,
                estimand=estimand,
                method=method,
                bias=float(np.mean(arr)),
                rmse=float(np.sqrt(np.mean(arr**2))),
                ci_covered=float(np.mean(covered[(estimand, method)])),
                design_effect=float(np.mean(deffs[(estimand, method)])),
            )
        )
    return rows


def _summarize(rows: list[ReplicationRow]) -> list[SummaryRow]:
    by_key: dict[tuple[str, str], list[ReplicationRow]] = {}
    for row in rows:
        by_key.setdefault((row.estimand, row.method), []).append(row)
    unweighted_bias: dict[tuple[str, int], float] = {}
    for row in rows:
        if row.method == "unweighted":
            unweighted_bias[(row.estimand, row.replication)] = row.bias
    summary = []
    for (estimand, method), group in by_key.items():
        bias = np.array([r.bias for r in group])
        n = len(group)
        mc_se = float(np.std(bias, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        improved = None
        if method != "unweighted":
            flags = [
                abs(r.bias) < abs(unweighted_bias[(estimand, r.replication)])
                for r in group
                if (estimand, r.replication) in unweighted_bias
            ]
            improved = float(np.mean(flags)) if flags else None
        summary.append(
            SummaryRow(
                estimand=estimand,
                method=method,
                n_replications=n,
                mean_bias=float(np.mean(bias)),
                mc_se_bias=mc_se,
                rmse=float(np.sqrt(np.mean(bias**2))),
                coverage=float(np.mean([r.ci_covered for r in group])),
                mean_design_effect=float(np.mean([r.design_effect for r in group])),
                improved_vs_unweighted=improved,
            )
        )
    return summary


def write_replication_csv(report: ReplicationReport, path) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["replication", "estimand", "method", "bias", "rmse", "ci_covered", "design_effect"]
        )
        for r in report.rows:
            writer.writerow(
                [r.replication, r.estimand, r.method, repr(r.bias), repr(r.rmse),
                 repr(r.ci_covered), repr(r.design_effect)]
            )


def write_summary_csv(report: ReplicationReport, path) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["estimand", "method", "n_replications", "mean_bias", "mc_se_bias", "rmse",
             "coverage", "mean_design_effect", "improved_vs_unweighted"]
        )
        for s in report.summary:
            writer.writerow(
                [s.estimand, s.method, s.n_replications, repr(s.mean_bias), repr(s.mc_se_bias),
                 repr(s.rmse), repr(s.coverage), repr(s.mean_design_effect),
                 "" if s.improved_vs_unweighted is None else repr(s.improved_vs_unweighted)]
            )


def write_failures_csv(report: ReplicationReport, path) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replication", "error"])
        for rep, msg in report.failures:
            writer.writerow([rep, msg])


def export_daily_cross_section(config: SimConfig, outdir, replication: int = 0, day: int = 0) -> dict:
    """Generate one daily cross-section and write every pipeline input file
    (schema, frame of sampled units, respondents, both benchmark tables)
    plus the realized truth, into outdir. Returns the path map."""
    import yaml
    from pathlib import Path

    from .io import write_benchmarks, write_frame, write_respondents, write_schema

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    population, truth, benchmarks = generate_population(config, replication)
    design = SamplingDesign.from_config(config)
    sampled, _ = draw_daily_sample(population, day, design, replication=replication)
    responded = simulate_response(
        population, sampled, config.response_model, config.seed, replication, day
    )
    schema = schema_from_config(config)
    paths = {
        "schema": outdir / "schema.yaml",
        "frame": outdir / "frame.csv",
        "respondents": outdir / "respondents.csv",
        "benchmark_margins": outdir / "benchmark_margins.csv",
        "benchmark_cells": outdir / "benchmark_cells.csv",
        "truth": outdir / "truth.yaml",
    }
    write_schema(schema, paths["schema"])
    write_frame(build_frame_units(population, sampled, responded), schema, paths["frame"])
    write_respondents(build_respondents(population, responded, day), schema, paths["respondents"])
    write_benchmarks(benchmarks["margins"], paths["benchmark_margins"])
    write_benchmarks(benchmarks["cells"], paths["benchmark_cells"])
    with open(paths["truth"], "w", encoding="utf-8") as fh:
        yaml.safe_dump(
            {
                "population_size": config.population_size,
                "true_means": truth.true_means,
                "n_sampled": int(sampled.size),
                "n_respondents": int(responded.size),
            },
            fh,
            sort_keys=True,
        )
    return paths


AGE_LEVELS = ("18-24", "25-44", "45-64", "65+")
GENDER_LEVELS = ("female", "male")


def default_config(
    seed: int = 20200904,
    population_size: int = 100_000,
    replications: int = 500,
    n_days: int = 1,
    **overrides,
) -> SimConfig:
    """Study configuration used by the bias-reduction experiment: response
    and frame coverage are driven by age and gender (missing at random),
    the binary outcome is driven by age, gender and region, and sampling is
    stratified by region with small regions oversampled."""
    regions = tuple(
        RegionSpec(name=f"R{k:02d}", share=share, density="high" if k <= 4 else "low")
        for k, share in enumerate(
            (0.20, 0.16, 0.14, 0.12, 0.10, 0.08, 0.07, 0.06, 0.04, 0.03), start=1
        )
    )
    region_effect = {
        ("region", r.name): coef
        for r, coef in zip(regions, np.linspace(-0.3, 0.3, len(regions)).tolist())
    }
    config = SimConfig(
        seed=seed,
        population_size=population_size,
        replications=replications,
        n_days=n_days,
        # Light shrinkage: strong enough to tame weight variance, weak enough
        # that stage 1 visibly corrects the within-frame response skew.
        l2_strength=0.05,
        regions=regions,
        covariates=(
            CategoricalGenerator(
                name="age", levels=AGE_LEVELS, probs=(0.15, 0.35, 0.30, 0.20)
            ),
            CategoricalGenerator(
                name="gender", levels=GENDER_LEVELS, probs=(0.52, 0.48)
            ),
        ),
        frame_coverage_model=LogisticModelSpec(
            intercept=0.9,
            coefficients={
                ("age", "18-24"): 0.8,
                ("age", "25-44"): 0.4,
                ("age", "65+"): -0.8,
                ("gender", "female"): -0.1,
            },
        ),
        response_model=ResponseModelSpec(
            intercept=-0.6,
            coefficients={
                ("age", "18-24"): -0.7,
                ("age", "25-44"): -0.2,
                ("age", "45-64"): 0.3,
                ("age", "65+"): 0.9,
                ("gender", "female"): 0.25,
            },
        ),
        outcome_models=(
            OutcomeModelSpec(
                name="cli",
                intercept=-0.5,
                coefficients={
                    ("age", "18-24"): -0.6,
                    ("age", "25-44"): -0.2,
                    ("age", "45-64"): 0.2,
                    ("age", "65+"): 0.6,
                    ("gender", "female"): 0.1,
                    **region_effect,
                },
                noise_sd=1.0,
                binary_threshold=0.0,
            ),
            OutcomeModelSpec(
                name="score",
                intercept=10.0,
                coefficients={
                    ("age", "25-44"): 1.0,
                    ("age", "45-64"): 2.0,
                    ("age", "65+"): 3.0,
                    **{k: 2.0 * v for k, v in region_effect.items()},
                },
                noise_sd=2.0,
            ),
        ),
    )
    if overrides:
        config = replace(config, **overrides)
    return config


def _parse_coefficients(raw: Mapping[str, float] | None, what: str) -> dict[tuple[str, str], float]:
    out: dict[tuple[str, str], float] = {}
    for key, coef in (raw or {}).items():
        if ":" not in key:
            raise InputError(f"{what}: coefficient key {key!r} must look like 'field:level'")
        fieldname, level = key.split(":", 1)
        out[(fieldname, level)] = float(coef)
    return out


def load_sim_config(path) -> SimConfig:
    """Parse a simulation config from YAML/JSON."""
    import yaml

    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise InputError(f"{path}: simulation config must be a mapping")

    def need(key):
        if key not in raw:
            raise InputError(f"{path}: missing required key {key!r}")
        return raw[key]

    regions = tuple(
        RegionSpec(name=str(r["name"]), share=float(r["share"]), density=str(r.get("density", "low")))
        for r in need("regions")
    )
    covariates = []
    for g in need("covariates"):
        by_region = g.get("probs_by_region")
        covariates.append(
            CategoricalGenerator(
                name=str(g["name"]),
                levels=tuple(str(v) for v in g["levels"]),
                probs=tuple(float(p) for p in g["probs"]),
                probs_by_region=(
                    {str(k): tuple(float(p) for p in v) for k, v in by_region.items()}
                    if by_region
                    else None
                ),
            )
        )
    cov_raw = need("frame_coverage_model")
    coverage = LogisticModelSpec(
        intercept=float(cov_raw.get("intercept", 0.0)),
        coefficients=_parse_coefficients(cov_raw.get("coefficients"), "frame_coverage_model"),
    )
    resp_raw = need("response_model")
    response = ResponseModelSpec(
        intercept=float(resp_raw.get("intercept", 0.0)),
        coefficients=_parse_coefficients(resp_raw.get("coefficients"), "response_model"),
        nmar_outcome=resp_raw.get("nmar_outcome"),
        nmar_coefficient=float(resp_raw.get("nmar_coefficient", 0.0)),
    )
    outcomes = tuple(
        OutcomeModelSpec(
            name=str(m["name"]),
            intercept=float(m.get("intercept", 0.0)),
            coefficients=_parse_coefficients(m.get("coefficients"), f"outcome_model {m['name']}"),
            noise_sd=float(m.get("noise_sd", 1.0)),
            binary_threshold=(
                None if m.get("binary_threshold") is None else float(m["binary_threshold"])
            ),
        )
        for m in need("outcome_models")
    )
    trim_raw = raw.get("trim", {})
    trim = TrimPolicy(
        lower_divisor=float(trim_raw.get("lower_divisor", 30.0)),
        upper_multiplier=float(trim_raw.get("upper_multiplier", 10.0)),
    )
    kwargs = dict(
        seed=int(need("seed")),
        population_size=int(need("population_size")),
        regions=regions,
        covariates=tuple(covariates),
        frame_coverage_model=coverage,
        response_model=response,
        outcome_models=outcomes,
        trim=trim,
    )
    if raw.get("inclusion_probabilities") is not None:
        kwargs["inclusion_probabilities"] = {
            str(k): float(v) for k, v in raw["inclusion_probabilities"].items()
        }
    if raw.get("cooldown_days") is not None:
        kwargs["cooldown_days"] = {str(k): int(v) for k, v in raw["cooldown_days"].items()}
    for key in (
        "base_inclusion_probability",
        "n_days",
        "replications",
        "min_answered",
        "l2_strength",
        "calibration_mode",
        "include_region_margin",
        "use_design_weights",
        "alpha_multiplier",
    ):
        if key in raw:
            kwargs[key] = raw[key]
    if raw.get("benchmark_covariates") is not None:
        kwargs["benchmark_covariates"] = tuple(str(c) for c in raw["benchmark_covariates"])
    return SimConfig(**kwargs)
