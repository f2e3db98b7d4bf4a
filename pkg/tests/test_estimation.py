"""Weighted estimators against brute-force evaluation of their formulas."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calibra.core import WeightVector
from calibra.errors import EstimationError, InputError
from calibra.estimation import (
    design_effect,
    estimate_domain_ratio,
    estimate_mean,
    estimate_ratio,
    estimate_total,
    outcome_column,
    region_indicator,
)

from conftest import make_respondent


def wv(*weights: float) -> WeightVector:
    return WeightVector(stage="final", entries={f"r{i}": w for i, w in enumerate(weights)})


def col(*values: float) -> dict[str, float]:
    return {f"r{i}": v for i, v in enumerate(values)}


# Naive loop oracles, deliberately independent of the numpy implementation.

def naive_mean(w, y):
    sw = swy = 0.0
    for wi, yi in zip(w, y):
        sw += wi
        swy += wi * yi
    point = swy / sw
    num = 0.0
    for wi, yi in zip(w, y):
        num += wi * wi * (yi - point) ** 2
    return point, num / (sw * sw)


def naive_total(w, y):
    swy = sw = 0.0
    for wi, yi in zip(w, y):
        sw += wi
        swy += wi * yi
    ybar = swy / sw
    var = 0.0
    for wi, yi in zip(w, y):
        var += wi * wi * (yi - ybar) ** 2
    return swy, var


def naive_ratio(w, y, z):
    num = den = 0.0
    for wi, yi, zi in zip(w, y, z):
        num += wi * yi
        den += wi * zi
    point = num / den
    var = 0.0
    for wi, yi, zi in zip(w, y, z):
        var += wi * wi * (yi - point * zi) ** 2
    return point, var / (den * den)


class TestMean:
    def test_equal_weights_reduce_to_simple_mean(self):
        est = estimate_mean(wv(1, 1, 1, 1), col(0, 1, 1, 0))
        assert est.point == 0.5
        assert est.variance == 0.0625
        assert est.ci_low == pytest.approx(0.5 - 1.96 * 0.25)
        assert est.ci_high == pytest.approx(0.5 + 1.96 * 0.25)

    def test_unequal_weights(self):
        est = estimate_mean(wv(1, 3), col(0, 1))
        assert est.point == 0.75
        assert est.variance == pytest.approx(1.125 / 16)

    def test_single_respondent_zero_dispersion(self):
        est = estimate_mean(wv(7.3), col(2.0))
        assert est.point == 2.0
        assert est.variance == 0.0
        assert est.ci_low == est.ci_high == 2.0

    def test_empty_sample_is_error(self):
        empty = WeightVector(stage="final", entries={})
        with pytest.raises(EstimationError, match="empty"):
            estimate_mean(empty, {})

    def test_non_finite_outcome_names_respondent(self):
        with pytest.raises(EstimationError, match="r1"):
            estimate_mean(wv(1, 1), col(0.0, math.nan))

    def test_missing_outcome_names_respondent(self):
        with pytest.raises(EstimationError, match="r1"):
            estimate_mean(wv(1, 1), {"r0": 1.0})


class TestTotal:
    def test_constant_outcome_zero_variance(self):
        est = estimate_total(wv(2, 3), col(1, 1))
        assert est.point == 5.0
        assert est.variance == 0.0

    def test_centered_at_weighted_mean(self):
        est = estimate_total(wv(1, 1), col(0, 2))
        assert est.point == 2.0
        assert est.variance == 2.0  # ybar = 1 -> 1 + 1

    def test_zero_outcomes(self):
        est = estimate_total(wv(1, 2, 3), col(0, 0, 0))
        assert est.point == 0.0
        assert est.variance == 0.0


class TestRatio:
    def test_unit_denominator_matches_mean_bitwise(self):
        weights = wv(0.3, 1.7, 2.2, 9.1)
        y = col(0.1, -2.0, 3.5, 0.0)
        z = col(1.0, 1.0, 1.0, 1.0)
        m = estimate_mean(weights, y)
        r = estimate_ratio(weights, y, z)
        assert r.point == m.point
        assert r.variance == m.variance
        assert (r.ci_low, r.ci_high) == (m.ci_low, m.ci_high)

    def test_identical_outcomes_give_unit_ratio(self):
        y = col(0.5, 2.0, -1.0)
        est = estimate_ratio(wv(1, 2, 3), y, dict(y))
        assert est.point == 1.0
        assert est.variance == 0.0

    def test_worked_example(self):
        est = estimate_ratio(wv(1, 2), col(1, 0), col(1, 1))
        assert est.point == pytest.approx(1 / 3)
        assert est.variance == pytest.approx(8 / 81)

    def test_zero_denominator_is_error(self):
        with pytest.raises(EstimationError, match="denominator"):
            estimate_ratio(wv(1, 1), col(1, 1), col(0, 0))


class TestDomainRatio:
    def test_full_domain_reduces_to_mean(self):
        weights = wv(1, 2, 5)
        y = col(1, 0, 1)
        z = col(1, 1, 1)
        m = estimate_mean(weights, y)
        d = estimate_domain_ratio(weights, y, z)
        assert d.point == m.point
        assert d.variance == m.variance

    def test_no_symptomatic_in_domain(self):
        est = estimate_domain_ratio(wv(1, 1), col(0, 0), col(1, 1))
        assert est.point == 0.0

    def test_within_region_prevalence(self):
        respondents = [
            make_respondent("r0", region="CA"),
            make_respondent("r1", region="CA"),
            make_respondent("r2", region="NY"),
        ]
        weights = WeightVector(stage="final", entries={"r0": 10.0, "r1": 30.0, "r2": 99.0})
        y = col(1, 0, 1)
        z = region_indicator(respondents, "CA")
        est = estimate_domain_ratio(weights, y, z)
        assert est.point == pytest.approx(0.25)  # 10 / 40

    def test_empty_domain_is_error(self):
        with pytest.raises(EstimationError):
            estimate_domain_ratio(wv(1, 1), col(1, 0), col(0, 0))

    def test_non_binary_rejected(self):
        with pytest.raises(InputError, match="not 0/1"):
            estimate_domain_ratio(wv(1, 1), col(0.5, 0), col(1, 1))


class TestAgainstOracle:
    def test_randomized_small_samples(self):
        rng = np.random.default_rng(123)
        for _ in range(300):
            n = rng.integers(1, 11)
            w = rng.uniform(0.1, 50.0, n)
            y = rng.normal(0.0, 5.0, n)
            z = rng.uniform(0.5, 3.0, n)
            weights = WeightVector(stage="final", entries={f"r{i}": w[i] for i in range(n)})
            ycol = {f"r{i}": y[i] for i in range(n)}
            zcol = {f"r{i}": z[i] for i in range(n)}

            m = estimate_mean(weights, ycol)
            em, ev = naive_mean(w, y)
            assert m.point == pytest.approx(em, rel=1e-12)
            assert m.variance == pytest.approx(ev, rel=1e-12, abs=1e-300)

            t = estimate_total(weights, ycol)
            et, etv = naive_total(w, y)
            assert t.point == pytest.approx(et, rel=1e-12)
            assert t.variance == pytest.approx(etv, rel=1e-12, abs=1e-300)

            r = estimate_ratio(weights, ycol, zcol)
            er, erv = naive_ratio(w, y, z)
            assert r.point == pytest.approx(er, rel=1e-12)
            assert r.variance == pytest.approx(erv, rel=1e-12, abs=1e-300)


class TestInvariances:
    # Outcomes stay out of the subnormal range: scaling by a power of two is
    # exact only while every intermediate product remains a normal float.
    _outcomes = st.one_of(
        st.just(0.0), st.floats(1e-6, 50.0), st.floats(-50.0, -1e-6)
    )

    @given(
        data=st.lists(
            st.tuples(st.floats(0.01, 100.0), _outcomes),
            min_size=1, max_size=12,
        ),
        k=st.integers(-10, 10),
    )
    @settings(max_examples=150, deadline=None)
    def test_power_of_two_rescaling_is_exact(self, data, k):
        c = 2.0**k
        w = [d[0] for d in data]
        y = {f"r{i}": d[1] for i, d in enumerate(data)}
        base = estimate_mean(WeightVector(stage="final", entries={f"r{i}": x for i, x in enumerate(w)}), y)
        scaled = estimate_mean(
            WeightVector(stage="final", entries={f"r{i}": c * x for i, x in enumerate(w)}), y
        )
        assert scaled.point == base.point
        assert scaled.variance == base.variance

    def test_arbitrary_rescaling_within_tolerance(self):
        rng = np.random.default_rng(9)
        w = rng.uniform(0.5, 5.0, 8)
        y = {f"r{i}": float(v) for i, v in enumerate(rng.normal(size=8))}
        z = {f"r{i}": float(v) for i, v in enumerate(rng.uniform(1, 2, 8))}
        for c in (3.0, 0.7, 123.456):
            base_w = WeightVector(stage="final", entries={f"r{i}": float(x) for i, x in enumerate(w)})
            scaled_w = WeightVector(stage="final", entries={f"r{i}": float(c * x) for i, x in enumerate(w)})
            b = estimate_ratio(base_w, y, z)
            s = estimate_ratio(scaled_w, y, z)
            assert s.point == pytest.approx(b.point, rel=1e-12)
            assert s.variance == pytest.approx(b.variance, rel=1e-12)
            bt, stt = estimate_total(base_w, y), estimate_total(scaled_w, y)
            assert stt.point == pytest.approx(c * bt.point, rel=1e-12)
            assert stt.variance == pytest.approx(c * c * bt.variance, rel=1e-12)

    def test_census_consistency(self):
        rng = np.random.default_rng(31)
        y = rng.normal(size=1000)
        z = (rng.random(1000) < 0.4).astype(float)
        entries = {f"u{i}": 1.0 for i in range(1000)}
        weights = WeightVector(stage="final", entries=entries)
        ycol = {f"u{i}": float(v) for i, v in enumerate(y)}
        zcol = {f"u{i}": float(v) for i, v in enumerate(z)}
        assert estimate_mean(weights, ycol).point == float(np.sum(y)) / 1000.0
        assert estimate_total(weights, ycol).point == float(np.sum(y))
        assert estimate_ratio(weights, ycol, zcol).point == float(np.sum(y)) / float(np.sum(z))


class TestDesignEffect:
    def test_uniform_weights_give_one(self):
        assert design_effect(wv(3, 3, 3)) == pytest.approx(1.0)

    def test_matches_cv_formula(self):
        w = np.array([1.0, 2.0, 3.0, 4.0])
        expected = 1.0 + w.var() / w.mean() ** 2
        assert design_effect(wv(*w)) == pytest.approx(expected)


class TestOutcomeColumn:
    def test_extracts_by_name(self):
        respondents = [make_respondent("a", cli=1.0), make_respondent("b", cli=0.0)]
        assert outcome_column(respondents, "cli") == {"a": 1.0, "b": 0.0}

    def test_missing_outcome_is_error(self):
        with pytest.raises(InputError, match="score"):
            outcome_column([make_respondent("a", cli=1.0)], "score")
