"""Exception hierarchy shared by every module."""


class SlingshotError(Exception):
    """Base class for all package errors."""


class DimensionError(SlingshotError, ValueError):
    """Shapes of games, profiles or vectors disagree."""


class DomainError(SlingshotError, ValueError):
    """A value lies outside the domain where a formula is defined."""


class NumericError(SlingshotError, ArithmeticError):
    """A non-finite value appeared in a computation."""


class ConvergenceError(SlingshotError, RuntimeError):
    """An iterative solver hit its iteration cap.

    ``best_residual`` carries the smallest residual seen before giving up.
    """

    def __init__(self, message, best_residual=float("nan"), iterations=0):
        super().__init__(message)
        self.best_residual = best_residual
        self.iterations = iterations


class UnsupportedCombinationError(SlingshotError, ValueError):
    """No certified relative-smoothness constants exist for a divergence/regularizer pair."""


class ConfigError(SlingshotError, ValueError):
    """Bad experiment configuration, preset or suite name."""


class InvariantViolation(SlingshotError, AssertionError):
    """A built-in check suite found a violated property."""
