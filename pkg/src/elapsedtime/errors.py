"""Exception hierarchy shared by the solver modules."""


class ElapsedTimeError(Exception):
    """Base class for all errors raised by this package."""


class NumericalError(ElapsedTimeError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class NonConvergence(NumericalError):
    """Fixed-point iteration hit its iteration cap.

    Carries the last residual so callers can tell a slow contraction from
    a genuinely ill-posed instantaneous-transmission step.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ValidationError(ElapsedTimeError, ValueError):
    """Input parameters violate a documented precondition."""


class GridMismatch(ValidationError):
    pass


class DegenerateConstants(ValidationError):
    """Certificate constants make a bound undefined (e.g. a zero denominator)."""


class InsufficientData(ValidationError):
    pass


class ConfigError(ValidationError):
    """Scenario file could not be parsed or validated."""
