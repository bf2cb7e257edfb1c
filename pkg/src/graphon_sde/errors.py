"""Exception hierarchy.

``ConfigError`` subclasses map to CLI exit code 2 and ``NumericalAbort``
subclasses to exit code 3.
"""


class GraphonSDEError(Exception):
    pass


class ConfigError(GraphonSDEError, ValueError):
    """Invalid parameters or experiment configuration."""


class InvalidGraphon(ConfigError):
    pass


class NonSymmetric(ConfigError):
    pass


class NonZeroDiagonal(ConfigError):
    pass


class WeightExceedsOne(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


class WrongDimension(DimensionMismatch):
    pass


class MassMismatch(ConfigError):
    pass


class GridMismatch(ConfigError):
    pass


class KeyCollision(ConfigError):
    pass


class NumericalAbort(GraphonSDEError, ArithmeticError):
    pass


class SingularGrid(NumericalAbort):
    """A graphon is infinite at a grid pair and the policy is ``reject``."""


class DivergentNorm(NumericalAbort):
    pass


class SupportTooLarge(NumericalAbort):
    """Union support exceeds the LP cap; use :func:`dbl_estimate`."""


class DegenerateFit(NumericalAbort):
    pass


class NonFiniteState(NumericalAbort):
    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")
