"""Utility modules for timing and logging."""

from .log_utils import configure_logging
from .timing import PhaseTimer, stopwatch

__all__ = [
    "PhaseTimer",
    "configure_logging",
    "stopwatch",
]
