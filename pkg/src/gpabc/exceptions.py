"""Exception hierarchy shared across the package."""


class GPABCError(Exception):
    """Base class for all package errors."""


class ContractViolation(GPABCError, ValueError):
    """An argument violates a documented precondition."""


class TransformDomainError(ContractViolation):
    """A discrepancy lies outside the domain of a transform (e.g. log of 0)."""


class ConditioningError(GPABCError):
    """Cholesky factorisation failed even after jitter escalation."""


class FitError(GPABCError):
    """A surrogate could not be fitted.

    ``diagnostics`` holds whatever per-restart information was gathered.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class DegenerateLabelsError(FitError):
    """Classification data contain only one class."""


class EstimationError(GPABCError):
    """Density estimation impossible (e.g. no accepted samples)."""


class DegeneratePosteriorError(GPABCError):
    """Unnormalised posterior is zero (or non-finite) everywhere."""


class SelectionError(GPABCError):
    """No candidate survived cross-validation."""
