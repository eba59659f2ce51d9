"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array shapes do not agree with a network spec or with each other."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared where only finite values are allowed."""


class DegenerateDirectionError(ValueError):
    """A direction vector had (near) zero norm and could not be normalized."""


class DivergenceError(NonFiniteError):
    """Training produced a non-finite loss."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DatasetFormatError(ValueError):
    """A CSV dataset file does not follow the documented schema."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or does not match what the caller expects."""


class ConfigError(ValueError):
    """An experiment config is malformed or references unknown presets/keys."""
