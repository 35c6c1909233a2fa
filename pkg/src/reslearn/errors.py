"""Exception types shared across the library."""


class ReslearnError(Exception):
    """Base class for all library errors."""


class DimensionMismatchError(ReslearnError):
    """Operands have incompatible shapes."""


class RankDeficientError(ReslearnError):
    """A design matrix does not have full column rank."""


class SingularMatrixError(ReslearnError):
    """A square matrix is singular (or numerically indistinguishable from it)."""


class IllConditionedError(ReslearnError):
    """A matrix is too ill-conditioned to invert reliably.

    Carries the condition-number estimate that triggered the refusal.
    """

    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


class NotSymmetricError(ReslearnError):
    """A matrix expected to be symmetric is not, beyond tolerance."""


class GenerationFailedError(ReslearnError):
    """Teacher generation exhausted its retry budget."""


class SolverFailedError(ReslearnError):
    """A convex solve did not reach an acceptable terminal status."""


class SingularCHatError(ReslearnError):
    """The learned left inverse cannot be inverted.

    Carries the condition estimate so callers can report it.
    """

    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


class DegenerateRowError(ReslearnError):
    """Too few usable samples to estimate a per-row scale factor."""

    def __init__(self, message: str, row: int):
        super().__init__(message)
        self.row = row
