"""Exception hierarchy shared by all modules."""


class AggBoundsError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(AggBoundsError, ValueError):
    """Malformed input: bad config field, negative cost, wrong length."""


class DimensionError(ValidationError):
    def __init__(self, what, expected, got):
        self.what = what
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: expected length {expected}, got {got}")


class NumericalError(AggBoundsError, RuntimeError):
    """A numerical procedure failed (non-convergence, singular solve, stall)."""


class ConvergenceError(NumericalError):
    def __init__(self, message, iterations, residual):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")


class LpError(NumericalError):
    def __init__(self, message, iterations=0, residuals=None):
        self.iterations = iterations
        self.residuals = residuals or {}
        detail = ", ".join(f"{k}={v:.3e}" for k, v in self.residuals.items())
        super().__init__(f"{message} (iterations={iterations}{', ' + detail if detail else ''})")


class StructureError(AggBoundsError):
    """The patrol model's tuple structure disagrees with the expected collapse."""


class PolicyError(AggBoundsError):
    """A policy is undefined or inadmissible on some state."""
