"""Exception hierarchy shared by the library and the CLI.

Every error carries the process exit code the CLI should use when the error
escapes a subcommand.
"""

from __future__ import annotations


class ResusError(Exception):
    """Base class for all library errors."""

    exit_code: int = 1


class ConfigError(ResusError):
    """Invalid or unreadable configuration."""

    exit_code = 2


class SpecMismatchError(ResusError):
    """A checkpoint does not match the architecture it is loaded into."""

    exit_code = 2


class DataError(ResusError):
    """Problem with input data or derived datasets."""

    exit_code = 3


class ParseError(DataError):
    """Malformed line in a source file."""

    def __init__(self, path: str, line_number: int, message: str):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = path
        self.line_number = line_number


class InsufficientHistoryError(DataError):
    """A user log is too short for the requested support size."""


class EmptyDatasetError(DataError):
    """No users or instances left to work with."""


class EncodingError(DataError):
    """A feature index falls outside its field vocabulary."""


class TrainingDivergedError(ResusError):
    """Loss became non-finite during training."""

    exit_code = 4

    def __init__(self, message: str, last_good: object | None = None):
        super().__init__(message)
        self.last_good = last_good


class ShapeError(ResusError):
    """Operand shapes are incompatible for a kernel."""


class SingularSystemError(ResusError):
    """SPD factorization failed even after jitter escalation."""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition number ~ {condition:.3e})")
        self.condition = condition


class GradientCheckError(ResusError):
    """Finite-difference check could not be evaluated."""


class UndefinedMetricError(ResusError):
    """A metric is undefined for the given input (e.g. single-class AUC)."""
