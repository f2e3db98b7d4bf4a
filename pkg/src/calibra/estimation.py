"""Design-based weighted estimators with variance and confidence intervals.

For weights w and outcomes y, z over the sample:

    mean   point = sum(w y) / sum(w)
           variance = sum(w^2 (y - point)^2) / sum(w)^2
    total  point = sum(w y)
           variance = sum(w^2 (y - ybar)^2)   with ybar the weighted mean
    ratio  point = sum(w y) / sum(w z)
           variance = sum(w^2 (y - point z)^2) / sum(w z)^2

Confidence bounds are point +/- alpha_multiplier * sqrt(variance); the
default multiplier 1.96 gives an approximate 95% interval. All reductions
use numpy's pairwise summation, so results are deterministic and stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import RespondentRecord, WeightVector
from .errors import EstimationError, InputError

DEFAULT_ALPHA_MULTIPLIER = 1.96


@dataclass(frozen=True)
class EstimateResult:
    kind: str
    point: float
    variance: float
    ci_low: float
    ci_high: float
    alpha_multiplier: float
    n_respondents: int
    weight_sum: float


def outcome_column(respondents: Sequence[RespondentRecord], name: str) -> dict[str, float]:
    """Extract one outcome as a respondent_id -> value mapping."""
    column = {}
    for r in respondents:
        try:
            column[r.respondent_id] = r.outcomes[name]
        except KeyError:
            raise InputError(
                f"respondent {r.respondent_id!r} has no outcome {name!r}"
            ) from None
    return column


def region_indicator(respondents: Sequence[RespondentRecord], region: str) -> dict[str, float]:
    """0/1 indicator of region membership per respondent."""
    return {r.respondent_id: 1.0 if r.region == region else 0.0 for r in respondents}


def _aligned(weights: WeightVector, column: Mapping[str, float], what: str) -> tuple[np.ndarray, np.ndarray]:
    if not weights.entries:
        raise EstimationError("empty sample")
    n = len(weights.entries)
    w = np.fromiter(weights.entries.values(), dtype=float, count=n)
    v = np.empty(n)
    for i, rid in enumerate(weights.entries):
        try:
            x = column[rid]
        except KeyError:
            raise EstimationError(f"respondent {rid!r} has no {what} value") from None
        if not math.isfinite(x):
            raise EstimationError(f"respondent {rid!r}: non-finite {what} value {x!r}")
        v[i] = x
    return w, v


def _interval(point: float, variance: float, alpha_multiplier: float) -> tuple[float, float]:
    margin = alpha_multiplier * math.sqrt(variance)
    return point - margin, point + margin


def _ratio_stats(w: np.ndarray, y: np.ndarray, z: np.ndarray) -> tuple[float, float]:
    denom = float(np.sum(w * z))
    if denom == 0.0:
        raise EstimationError("undefined ratio: weighted denominator is zero")
    point = float(np.sum(w * y)) / denom
    variance = float(np.sum(w * w * (y - point * z) ** 2)) / denom**2
    return point, variance


def estimate_mean(
    weights: WeightVector,
    y: Mapping[str, float],
    alpha_multiplier: float = DEFAULT_ALPHA_MULTIPLIER,
) -> EstimateResult:
    """Weighted population mean of y with its variance estimate."""
    w, yv = _aligned(weights, y, "outcome")
    point, variance = _ratio_stats(w, yv, np.ones_like(yv))
    lo, hi = _interval(point, variance, alpha_multiplier)
    return EstimateResult(
        kind="mean",
        point=point,
        variance=variance,
        ci_low=lo,
        ci_high=hi,
        alpha_multiplier=alpha_multiplier,
        n_respondents=len(w),
        weight_sum=float(np.sum(w)),
    )


def estimate_total(
    weights: WeightVector,
    y: Mapping[str, float],
    alpha_multiplier: float = DEFAULT_ALPHA_MULTIPLIER,
) -> EstimateResult:
    """Weighted population total of y; the variance centers deviations at
    the weighted mean."""
    w, yv = _aligned(weights, y, "outcome")
    weight_sum = float(np.sum(w))
    point = float(np.sum(w * yv))
    ybar = point / weight_sum
    variance = float(np.sum(w * w * (yv - ybar) ** 2))
    lo, hi = _interval(point, variance, alpha_multiplier)
    return EstimateResult(
        kind="total",
        point=point,
        variance=variance,
        ci_low=lo,
        ci_high=hi,
        alpha_multiplier=alpha_multiplier,
        n_respondents=len(w),
        weight_sum=weight_sum,
    )


def estimate_ratio(
    weights: WeightVector,
    y: Mapping[str, float],
    z: Mapping[str, float],
    alpha_multiplier: float = DEFAULT_ALPHA_MULTIPLIER,
) -> EstimateResult:
    """Weighted ratio of population totals of y and z."""
    w, yv = _aligned(weights, y, "numerator")
    _, zv = _aligned(weights, z, "denominator")
    point, variance = _ratio_stats(w, yv, zv)
    lo, hi = _interval(point, variance, alpha_multiplier)
    return EstimateResult(
        kind="ratio",
        point=point,
        variance=variance,
        ci_low=lo,
        ci_high=hi,
        alpha_multiplier=alpha_multiplier,
        n_respondents=len(w),
        weight_sum=float(np.sum(w)),
    )


def estimate_domain_ratio(
    weights: WeightVector,
    y: Mapping[str, float],
    z: Mapping[str, float],
    alpha_multiplier: float = DEFAULT_ALPHA_MULTIPLIER,
) -> EstimateResult:
    """Prevalence of a binary indicator y within the domain flagged by the
    binary indicator z: the ratio estimator applied to (y*z, z)."""
    for name, col in (("indicator", y), ("domain", z)):
        for rid in weights.entries:
            v = col.get(rid)
            if v not in (0.0, 1.0, 0, 1):
                raise InputError(
                    f"respondent {rid!r}: {name} value {v!r} is not 0/1"
                )
    yz = {rid: y[rid] * z[rid] for rid in weights.entries}
    return estimate_ratio(weights, yz, z, alpha_multiplier)


def design_effect(weights: WeightVector) -> float:
    """Variance inflation from unequal weights: 1 + CV^2."""
    w = np.fromiter(weights.entries.values(), dtype=float, count=len(weights.entries))
    mean = float(np.mean(w))
    return 1.0 + float(np.var(w)) / mean**2
