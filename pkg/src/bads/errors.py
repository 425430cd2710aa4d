"""Exception types shared across the package."""


class BadsError(Exception):
    """Base class for all package errors."""


class ValidationError(BadsError, ValueError):
    """Bad input: wrong shape, out-of-range value, inconsistent configuration."""


class ShapeError(ValidationError):
    """Array dimensions do not line up."""


class DivergenceError(BadsError, FloatingPointError):
    """A loss, gradient or parameter became non-finite during training."""

    def __init__(self, message, step=None, term=None):
        super().__init__(message)
        self.step = step
        self.term = term
