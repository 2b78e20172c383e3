"""
Exception hierarchy shared by every reasoner module.
"""


class ReasonerError(Exception):
    """Base class for all errors raised by the reasoner."""


class ShapeError(ReasonerError):
    """Tensor shapes are incompatible for the requested operation."""


class NumericError(ReasonerError):
    """A NaN or infinite value reached an operation that forbids it."""


class TapeError(ReasonerError):
    """Invalid use of a computation tape."""


class DatasetError(ReasonerError):
    """Malformed or inconsistent dataset input."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class ConfigError(ReasonerError):
    """Unknown key, invalid value or contradictory settings."""


class ActionError(ReasonerError):
    """An action is not valid for the state it is applied to."""


class PolicyError(ReasonerError):
    """The policy produced an unusable distribution."""


class TrainingError(ReasonerError):
    """A training step could not be completed."""


class CheckpointError(ReasonerError):
    """A checkpoint file is missing data or has an unsupported format."""
