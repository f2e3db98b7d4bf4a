"""Shared fixtures: a small age/gender schema and record builders."""

from __future__ import annotations

import pytest

from calibra.core import CovariateSchema, CovariateSpec, FrameUnit, RespondentRecord

AGE_LEVELS = ("18-24", "25-44", "45-64", "65+")
GENDER_LEVELS = ("female", "male")


@pytest.fixture
def age_spec() -> CovariateSpec:
    return CovariateSpec(
        name="age",
        kind="continuous",
        bucket_edges=(25.0, 45.0, 65.0),
        bucket_labels=AGE_LEVELS,
    )


@pytest.fixture
def schema() -> CovariateSchema:
    return CovariateSchema(
        covariates=(
            CovariateSpec(name="age", kind="categorical", levels=AGE_LEVELS),
            CovariateSpec(name="gender", kind="categorical", levels=GENDER_LEVELS),
        )
    )


def make_respondent(
    rid: str,
    region: str = "CA",
    age: str = "25-44",
    gender: str = "female",
    answered: int = 5,
    **outcomes: float,
) -> RespondentRecord:
    return RespondentRecord(
        respondent_id=rid,
        region=region,
        covariate_values={"age": age, "gender": gender},
        outcomes=dict(outcomes),
        answered_count=answered,
    )


def make_frame_unit(
    uid: str,
    region: str = "CA",
    age: str = "25-44",
    gender: str = "female",
    sampled: bool = True,
    responded: bool = False,
) -> FrameUnit:
    return FrameUnit(
        unit_id=uid,
        region=region,
        covariate_values={"age": age, "gender": gender},
        sampled=sampled,
        responded=responded,
    )
