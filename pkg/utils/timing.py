"""
Timing Utilities Module.

Wall-clock phase timing for estimator runs and benchmarks.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator


@dataclass
class PhaseTimer:
    """
    Accumulates monotonic wall-clock time per named phase, in milliseconds.

    Usage:
        timer = PhaseTimer()
        with timer.phase("assembly"):
            ...
    """

    phases: dict[str, float] = field(default_factory=dict)

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.add(name, (time.perf_counter() - start) * 1000.0)

    def add(self, name: str, elapsed_ms: float) -> None:
        self.phases[name] = self.phases.get(name, 0.0) + elapsed_ms

    def get(self, name: str) -> float:
        return self.phases.get(name, 0.0)

    def total(self, *names: str) -> float:
        """Sum of the given phases, or of every phase when none are named."""
        keys = names or tuple(self.phases)
        return sum(self.phases.get(key, 0.0) for key in keys)

    def merge(self, other: PhaseTimer) -> None:
        for name, elapsed in other.phases.items():
            self.add(name, elapsed)

    def to_dict(self) -> dict[str, float]:
        return dict(self.phases)


@contextmanager
def stopwatch() -> Iterator[list[float]]:
    """Yield a one-element list that holds the elapsed seconds on exit."""
    elapsed = [0.0]
    start = time.perf_counter()
    try:
        yield elapsed
    finally:
        elapsed[0] = time.perf_counter() - start
