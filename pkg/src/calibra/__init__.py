"""Two-stage survey weighting: inverse-propensity nonresponse adjustment
within a sampling frame, then calibration (post-stratification or raking)
against population benchmarks, with design-based estimators and a
Monte-Carlo verification harness."""

__version__ = "0.1.0"

from .core import (
    BenchmarkTable,
    CovariateSchema,
    CovariateSpec,
    FrameUnit,
    Margin,
    RespondentRecord,
    WeightVector,
    bucketize,
    filter_eligible,
)
from .calibration import CalibrationReport, RakingConfig, post_stratify, rake, trim_and_rescale
from .errors import (
    CalibraError,
    CalibrationError,
    DegenerateFitError,
    EstimationError,
    InputError,
    NumericalError,
)
from .estimation import (
    EstimateResult,
    estimate_domain_ratio,
    estimate_mean,
    estimate_ratio,
    estimate_total,
)
from .propensity import PropensityModel, TrimPolicy, fit_propensity, ipsw_weights
from .simulator import SimConfig, default_config, generate_population, run_replications

__all__ = [
    "BenchmarkTable",
    "CalibraError",
    "CalibrationError",
    "CalibrationReport",
    "CovariateSchema",
    "CovariateSpec",
    "DegenerateFitError",
    "EstimateResult",
    "EstimationError",
    "FrameUnit",
    "InputError",
    "Margin",
    "NumericalError",
    "PropensityModel",
    "RakingConfig",
    "RespondentRecord",
    "SimConfig",
    "TrimPolicy",
    "WeightVector",
    "bucketize",
    "default_config",
    "estimate_domain_ratio",
    "estimate_mean",
    "estimate_ratio",
    "estimate_total",
    "filter_eligible",
    "fit_propensity",
    "generate_population",
    "ipsw_weights",
    "post_stratify",
    "rake",
    "run_replications",
    "trim_and_rescale",
]
