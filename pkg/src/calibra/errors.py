"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: InputError -> 1, NumericalError -> 2,
and plain OSError/FileNotFoundError -> 3.
"""


class CalibraError(Exception):
    """Base class for all errors raised by this package."""


class InputError(CalibraError):
    """Invalid input data, schema, or configuration."""


class CalibrationError(InputError):
    """Respondents and benchmarks cannot be reconciled (e.g. a respondent
    falls in a cell or margin category the benchmark table does not carry)."""


class NumericalError(CalibraError):
    """A computation failed numerically (degenerate fit, propensity
    underflow, undefined ratio)."""


class DegenerateFitError(NumericalError):
    """Propensity fit is impossible: the sampled frame is all-responded or
    all-nonresponded."""


class EstimationError(NumericalError):
    """An estimator could not be evaluated (empty sample, zero weighted
    denominator, non-finite outcome)."""
