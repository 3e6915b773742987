"""
Exception types for the hybrid state estimation toolkit.

Every error derives from a builtin (ValueError / RuntimeError) so callers
that only catch builtins keep working.
"""

from __future__ import annotations

from typing import Optional


class NetworkError(ValueError):
    """Base class for invalid network input."""


class SchemaError(NetworkError):
    """Network file does not follow the JSON schema."""


class DuplicateNodeError(NetworkError):
    """Two nodes share the same identifier."""


class UnknownNodeError(NetworkError):
    """A branch or measurement refers to a node that does not exist."""


class MissingSlackError(NetworkError):
    """No slack node was designated."""


class MultipleSlackError(NetworkError):
    """More than one slack node was designated."""


class SlackZeroInjectionError(NetworkError):
    """The slack node is flagged as a zero-injection node."""


class DisconnectedNetworkError(NetworkError):
    """The network graph has more than one island."""

    def __init__(self, message: str, islands: int):
        super().__init__(message)
        self.islands = islands


class ZeroAdmittanceError(NetworkError):
    """A branch has zero series admittance."""


class MeasurementError(ValueError):
    """Invalid measurement kind, location, sigma or weight."""


class PlacementError(ValueError):
    """Invalid meter placement."""


class DimensionError(ValueError):
    """Block dimensions do not match."""


class SingularSystemError(RuntimeError):
    """Factorization hit a zero pivot."""

    def __init__(self, message: str, pivot: Optional[int] = None):
        if pivot is not None:
            message = f"{message} (pivot {pivot})"
        super().__init__(message)
        self.pivot = pivot


class PowerFlowDivergedError(RuntimeError):
    """Newton power flow did not reach its tolerance."""

    def __init__(self, message: str, iterations: int):
        super().__init__(message)
        self.iterations = iterations


class DegenerateIndexError(ValueError):
    """A performance index has a zero denominator (noise-free measurements)."""
