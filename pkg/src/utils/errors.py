"""
Exceptions raised by the smoothing library.

Every exception carries a human-readable ``message`` attribute so the CLI and
the API server can report it without inspecting the type.
"""
from typing import Optional


class SmoothingError(Exception):
    """Base class for all library errors."""
    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class DegenerateWeightsError(SmoothingError):
    """All weights of a categorical draw are zero (or -inf in log space)."""
    def __init__(self, message: str = "degenerate weight vector", time_index: Optional[int] = None):
        if time_index is not None:
            message = f"{message} at t={time_index}"
        super().__init__(message)
        self.time_index = time_index


class CouplingCapExceeded(SmoothingError):
    """The rejection loop of the generic maximal coupling ran out of rounds."""
    def __init__(self, rounds: int):
        super().__init__(f"maximal coupling did not terminate within {rounds} rejection rounds")
        self.rounds = rounds


class EstimatorCapExceeded(SmoothingError):
    """Coupled chains did not meet before the iteration cap; the estimate is invalid."""
    def __init__(self, cap: int, record=None):
        super().__init__(f"coupled chains did not meet within {cap} iterations")
        self.cap = cap
        self.record = record


class NonFiniteGradientError(SmoothingError):
    """A log-joint gradient evaluated to NaN or infinity."""
    def __init__(self, time_index: int):
        super().__init__(f"non-finite log-joint gradient at t={time_index}")
        self.time_index = time_index


class ConfigError(SmoothingError):
    """Malformed configuration file; ``line`` is 1-based when known."""
    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        where = path or "<config>"
        if line is not None:
            where = f"{where}:{line}"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.path = path


class UsageError(SmoothingError):
    """Bad command-line usage."""


class BudgetExhausted(SmoothingError):
    """A time budget stopped a sweep before every replicate started."""
