"""Exception types shared across the package."""


class VlBayesError(Exception):
    """Base class for all package errors."""


class EvaluationError(VlBayesError):
    """An observation mapping returned a non-finite value.

    ``index`` points at the first offending output coordinate.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class DataDomainError(VlBayesError, ValueError):
    """Data lies outside the support of the declared likelihood family."""


class NumericalError(VlBayesError, RuntimeError):
    """A linear-algebra operation failed beyond recoverable jitter."""


class DegenerateEvidenceError(NumericalError):
    """The weighted residual sum of squares collapsed to (numerical) zero,
    so the scale-marginalized evidence diverges."""
