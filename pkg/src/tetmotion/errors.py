"""Exception hierarchy shared by all modules."""


class TetMotionError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(TetMotionError, ValueError):
    """An argument is malformed, out of range, or has the wrong shape."""


class NumericError(TetMotionError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message, index=None, name=None):
        super().__init__(message)
        self.index = index
        self.name = name


class ContractViolation(TetMotionError, RuntimeError):
    """A precondition of an operation does not hold for its inputs."""


class FitDiverged(TetMotionError, RuntimeError):
    """An optimisation lost its surface or produced unusable state."""
