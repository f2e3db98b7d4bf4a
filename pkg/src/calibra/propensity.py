"""Stage 1: response-propensity modeling and inverse-propensity weights.

The propensity model is an L2-penalized logistic regression of the responded
flag on one-hot encoded bucketed covariates, fit over the sampled frame units
with a damped Newton solver. The penalized objective is

    f(b) = (1/n) * sum_i [ y_i eta_i - log(1 + exp(eta_i)) ]
           - (l2/2) * sum_k s_k^2 b_k^2

where s_k is the standard deviation of one-hot column k over the sampled
units. Penalizing s_k * b_k is equivalent to an unweighted ridge penalty on
standardized columns, and the 1/n factor makes the penalty strength
invariant to sample size. The intercept is never penalized. Each covariate's
first declared level is the reference level with an implicit coefficient 0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import CovariateSchema, FrameUnit, RespondentRecord, WeightVector
from .errors import DegenerateFitError, InputError, NumericalError

SCORE_TOL = 1e-8
MAX_NEWTON_ITERATIONS = 200
PROPENSITY_UNDERFLOW = 1e-12


@dataclass(frozen=True)
class TrimPolicy:
    """Weight-trimming bounds relative to the mean weight.

    Weights below mean/lower_divisor are raised to that floor; weights above
    mean*upper_multiplier are lowered to that cap. rescale_target, when set,
    is the fallback rescale total for trim_and_rescale.
    """

    lower_divisor: float = 30.0
    upper_multiplier: float = 10.0
    rescale_target: float | None = None

    def __post_init__(self) -> None:
        if not self.lower_divisor > 0:
            raise InputError(f"lower_divisor must be positive, got {self.lower_divisor!r}")
        if not self.upper_multiplier > 0:
            raise InputError(f"upper_multiplier must be positive, got {self.upper_multiplier!r}")
        if not self.lower_divisor * self.upper_multiplier > 1:
            raise InputError("trim floor must stay below trim cap")
        if self.rescale_target is not None and not self.rescale_target > 0:
            raise InputError(f"rescale_target must be positive, got {self.rescale_target!r}")

    @classmethod
    def no_trim(cls) -> "TrimPolicy":
        return cls(lower_divisor=math.inf, upper_multiplier=math.inf)


def apply_trim(weights: np.ndarray, policy: TrimPolicy) -> tuple[np.ndarray, int, int]:
    """Clamp weights to [mean/lower_divisor, mean*upper_multiplier].

    The mean is computed once from the untrimmed weights (single pass, no
    iteration). Returns (clamped, n_raised, n_lowered).
    """
    mean = float(np.mean(weights))
    floor = mean / policy.lower_divisor
    cap = mean * policy.upper_multiplier
    low = int(np.count_nonzero(weights < floor))
    high = int(np.count_nonzero(weights > cap))
    return np.clip(weights, floor, cap), low, high


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ez = np.exp(eta[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class PropensityModel:
    """Fitted response-propensity model.

    coefficients map (covariate, level) -> coefficient for every
    non-reference level; the reference level (first declared) is absent and
    carries an implicit 0. levels records the full declared level order per
    covariate so predictions can reject unknown categories.
    """

    intercept: float
    coefficients: dict[tuple[str, str], float]
    levels: dict[str, tuple[str, ...]]
    l2_strength: float
    converged: bool
    iterations: int

    def linear_predictor(self, covariate_values: Mapping[str, str]) -> float:
        eta = self.intercept
        for cov, declared in self.levels.items():
            try:
                value = covariate_values[cov]
            except KeyError:
                raise InputError(f"missing covariate {cov!r} for propensity prediction") from None
            if value == declared[0]:
                continue
            try:
                eta += self.coefficients[(cov, value)]
            except KeyError:
                raise InputError(
                    f"unknown level {value!r} for covariate {cov!r} in propensity model"
                ) from None
        return eta

    def propensity(self, covariate_values: Mapping[str, str]) -> float:
        eta = self.linear_predictor(covariate_values)
        if eta >= 0:
            return 1.0 / (1.0 + math.exp(-eta))
        ez = math.exp(eta)
        return ez / (1.0 + ez)


def _design_matrix(
    units: Sequence[FrameUnit], schema: CovariateSchema
) -> tuple[np.ndarray, list[tuple[str, str]]]:
    columns: list[tuple[str, str]] = []
    for spec in schema:
        columns += [(spec.name, level) for level in spec.category_levels[1:]]
    col_index = {key: j for j, key in enumerate(columns)}
    X = np.zeros((len(units), 1 + len(columns)))
    X[:, 0] = 1.0
    for i, unit in enumerate(units):
        for spec in schema:
            value = unit.covariate_values.get(spec.name)
            if value is None or value not in spec.category_levels:
                raise InputError(
                    f"frame unit {unit.unit_id!r}: invalid value {value!r} "
                    f"for covariate {spec.name!r}"
                )
            j = col_index.get((spec.name, value))
            if j is not None:
                X[i, 1 + j] = 1.0
    return X, columns


def fit_propensity(
    frame: Sequence[FrameUnit],
    schema: CovariateSchema,
    l2_strength: float = 1.0,
    *,
    max_iterations: int = MAX_NEWTON_ITERATIONS,
    tol: float = SCORE_TOL,
) -> PropensityModel:
    """Fit the penalized logistic response model over sampled frame units.

    Damped Newton with step-halving on the penalized log-likelihood;
    converged when every score component is below tol in magnitude. A
    non-converged fit is returned with converged=False and a warning rather
    than raised.
    """
    if l2_strength < 0:
        raise InputError(f"l2_strength must be >= 0, got {l2_strength!r}")
    sampled = [u for u in frame if u.sampled]
    if not sampled:
        raise DegenerateFitError("no sampled units in frame")
    y = np.array([1.0 if u.responded else 0.0 for u in sampled])
    n = len(sampled)
    n_resp = int(y.sum())
    if n_resp == 0 or n_resp == n:
        raise DegenerateFitError(
            f"degenerate frame: {n_resp} responders among {n} sampled units"
        )

    X, columns = _design_matrix(sampled, schema)
    col_mean = X[:, 1:].mean(axis=0)
    col_var = col_mean * (1.0 - col_mean)
    # Levels absent from the sampled data (zero variance, zero mean) carry no
    # information; freeze their coefficients at 0 instead of letting the
    # Hessian go singular.
    active = np.concatenate(([True], col_var > 0))
    Xa = X[:, active]
    penalty = np.concatenate(([0.0], l2_strength * col_var[col_var > 0]))

    beta = np.zeros(Xa.shape[1])
    converged = False
    iterations = 0

    def objective(b: np.ndarray) -> float:
        eta = Xa @ b
        loglik = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
        return loglik / n - 0.5 * float(np.sum(penalty * b * b))

    for _ in range(max_iterations):
        eta = Xa @ beta
        p = _sigmoid(eta)
        score = (Xa.T @ (y - p)) / n - penalty * beta
        # Convergence is judged on the score of the total (unscaled)
        # penalized log-likelihood, i.e. n times the scaled score.
        if float(np.max(np.abs(score))) * n < tol:
            converged = True
            break
        w = p * (1.0 - p)
        hess = (Xa.T * w) @ Xa / n + np.diag(penalty)
        try:
            step = np.linalg.solve(hess, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, score, rcond=None)[0]
        f0 = objective(beta)
        t = 1.0
        candidate = beta + step
        while objective(candidate) < f0 and t > 2.0**-30:
            t *= 0.5
            candidate = beta + t * step
        beta = candidate
        iterations += 1
    else:
        warnings.warn(
            f"propensity fit did not converge in {max_iterations} iterations",
            RuntimeWarning,
            stacklevel=2,
        )

    coefficients: dict[tuple[str, str], float] = {}
    k = 1
    for j, key in enumerate(columns):
        if active[1 + j]:
            coefficients[key] = float(beta[k])
            k += 1
        else:
            coefficients[key] = 0.0
    return PropensityModel(
        intercept=float(beta[0]),
        coefficients=coefficients,
        levels={spec.name: spec.category_levels for spec in schema},
        l2_strength=l2_strength,
        converged=converged,
        iterations=iterations,
    )


def ipsw_weights(
    model: PropensityModel,
    respondents: Sequence[RespondentRecord],
    policy: TrimPolicy | None = None,
    inclusion_probabilities: Mapping[str, float] | None = None,
) -> WeightVector:
    """Inverse-propensity nonresponse weights with stage-1 trimming.

    weight_j = 1 / propensity_j, optionally divided by the respondent's
    sampling inclusion probability when one is supplied. Trimming clamps to
    [mean/lower_divisor, mean*upper_multiplier] of the untrimmed weights; no
    rescaling happens at this stage.
    """
    if not respondents:
        raise InputError("no respondents to weight")
    policy = policy or TrimPolicy()
    weights = np.empty(len(respondents))
    for i, r in enumerate(respondents):
        p = model.propensity(r.covariate_values)
        if p < PROPENSITY_UNDERFLOW:
            raise NumericalError(
                f"respondent {r.respondent_id!r}: propensity {p!r} underflows"
            )
        w = 1.0 / p
        if inclusion_probabilities is not None:
            try:
                pi = inclusion_probabilities[r.respondent_id]
            except KeyError:
                raise InputError(
                    f"respondent {r.respondent_id!r}: no inclusion probability supplied"
                ) from None
            if not 0 < pi <= 1:
                raise InputError(
                    f"respondent {r.respondent_id!r}: inclusion probability {pi!r} outside (0, 1]"
                )
            w /= pi
        weights[i] = w
    trimmed, _, _ = apply_trim(weights, policy)
    entries = {r.respondent_id: float(w) for r, w in zip(respondents, trimmed)}
    return WeightVector(stage="ipsw", entries=entries)


def write_model(model: PropensityModel, path) -> None:
    """Serialize a model as CSV: one metadata header block, then one
    (covariate, level, coefficient) row per declared level in order. The
    first row of each covariate is its reference level."""
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["intercept", "l2_strength", "converged", "iterations"])
        writer.writerow(
            [
                repr(model.intercept),
                repr(model.l2_strength),
                "1" if model.converged else "0",
                str(model.iterations),
            ]
        )
        writer.writerow(["covariate", "level", "coefficient"])
        for cov, declared in model.levels.items():
            for level in declared:
                coef = 0.0 if level == declared[0] else model.coefficients[(cov, level)]
                writer.writerow([cov, level, repr(coef)])


def read_model(path) -> PropensityModel:
    import csv

    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 4 or rows[0] != ["intercept", "l2_strength", "converged", "iterations"]:
        raise InputError(f"{path}: not a propensity model file")
    if rows[2] != ["covariate", "level", "coefficient"]:
        raise InputError(f"{path}: missing coefficient header")
    meta = rows[1]
    levels: dict[str, list[str]] = {}
    coefficients: dict[tuple[str, str], float] = {}
    for i, row in enumerate(rows[3:], start=4):
        if len(row) != 3:
            raise InputError(f"{path}:{i}: malformed coefficient row")
        cov, level, coef = row
        declared = levels.setdefault(cov, [])
        if level in declared:
            raise InputError(f"{path}:{i}: duplicate level {level!r} for covariate {cov!r}")
        declared.append(level)
        if len(declared) > 1:
            coefficients[(cov, level)] = float(coef)
    return PropensityModel(
        intercept=float(meta[0]),
        coefficients=coefficients,
        levels={cov: tuple(ls) for cov, ls in levels.items()},
        l2_strength=float(meta[1]),
        converged=meta[2] == "1",
        iterations=int(meta[3]),
    )
