"""Exception types shared across the package."""


class TreeFlowError(Exception):
    """Base class for all package errors."""


class ValidationError(TreeFlowError, ValueError):
    """Bad input: wrong length, out-of-range index, non-positive ratio, ..."""


class DegenerateBranchError(ValidationError):
    """A resistance ratio fell below the positivity floor."""


class NumericalDegeneracyError(TreeFlowError, ArithmeticError):
    """A factorization or solve failed where theory says it cannot."""
