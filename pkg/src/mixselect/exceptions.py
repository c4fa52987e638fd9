"""Exception types shared across the package.

The CLI maps these onto exit codes: DataError subclasses exit 2,
NumericalError subclasses exit 3.
"""


class MixselectError(Exception):
    """Base class for package errors."""


class DataError(MixselectError):
    """Input data cannot be used (missing columns, empty table, bad values)."""


class DegenerateColumnError(DataError):
    """A column has zero variance and cannot be standardized."""


class NumericalError(MixselectError):
    """A numerical procedure failed (conditioning, rank, positive definiteness)."""


class CollinearityError(NumericalError):
    """A matrix that must have full column rank does not."""


class ConditioningError(NumericalError):
    """A covariance estimate is too ill conditioned even after shrinkage."""


class ExtrapolationWarning(UserWarning):
    """Prediction points lie far outside the training exposure range."""
