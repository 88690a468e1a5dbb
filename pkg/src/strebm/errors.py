"""Exception types raised across the package."""


class StrEBMError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(StrEBMError, ValueError):
    pass


class NotPositiveDefiniteError(StrEBMError, ValueError):
    """A Cholesky pivot was non-positive (jitter too small or bad length-scale)."""


class NumericalInstabilityError(StrEBMError, ArithmeticError):
    pass


class UndefinedCorrelationError(StrEBMError, ValueError):
    """Correlation requested for a constant vector."""


class UnsupportedSizeError(StrEBMError, ValueError):
    pass


class TrainingDivergedError(StrEBMError, ArithmeticError):
    """Loss or gradient became non-finite during training.

    The partial history up to (not including) the failing epoch is kept on
    the exception so callers can still flush it to disk.
    """

    def __init__(self, epoch, message="", history=None, state=None):
        self.epoch = epoch
        self.history = list(history) if history is not None else []
        self.state = state
        super().__init__(f"training diverged at epoch {epoch}: {message}")
