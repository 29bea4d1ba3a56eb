"""Exception hierarchy shared by every module of the package."""


class RecipError(Exception):
    """Base class for all errors raised by :mod:`recip`."""


class GraphValidationError(RecipError, ValueError):
    """The vertex/arc data violates a structural requirement.

    ``kind`` is one of ``"duplicate"``, ``"unknown-vertex"``, ``"loop"``,
    ``"asymmetric"``, ``"disconnected"``, ``"not-a-walk"``.
    """

    def __init__(self, kind: str, message: str, offender=None):
        super().__init__(message)
        self.kind = kind
        self.offender = offender


class NotAGradientError(RecipError, ValueError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class IntensityError(RecipError, ValueError):
    """Invalid intensity data (non-positive rate, unknown arc, bad time)."""


class NumericalError(RecipError, ArithmeticError):
    """A numerical procedure failed (underflow, non-convergence, budget exceeded)."""


class FitError(NumericalError):
    """A short-time expansion fit did not reach the asymptotic regime."""


class EmptyEventError(NumericalError):
    """No sample satisfied the conditioning event."""
