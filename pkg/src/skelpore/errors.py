"""Exception hierarchy. The CLI maps each class to its own exit code."""


class SkelporeError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InputOutputError(SkelporeError):
    exit_code = 3


class FormatError(SkelporeError):
    """Unreadable or inconsistent metadata, RAW, CSV, network or scenario file."""

    exit_code = 4


class SizeMismatchError(FormatError):
    """RAW file length does not match the declared dims."""


class ScenarioError(FormatError):
    """Bad scenario field. ``line`` is the 1-based source line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SolverError(SkelporeError):
    exit_code = 5


class StabilityError(SkelporeError):
    """Explicit step would make a node's self-weight negative."""

    exit_code = 6


class TopologyError(SkelporeError):
    """Internal invariant violation in skeleton / partition / network construction."""

    exit_code = 7


class BoundsError(SkelporeError, IndexError):
    exit_code = 7


class CalibrationError(SkelporeError):
    exit_code = 5
