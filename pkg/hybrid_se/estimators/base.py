"""
Estimator base classes and enums.

Supported Estimators:
- CEC: complex normal equations with exact equality constraints (KKT)
- CNE: complex normal equations, constraints as weighted pseudo-measurements
- REC: real polar-coordinate Gauss-Newton with equality constraints (baseline)
"""

from __future__ import annotations

import json
import logging
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
from scipy.sparse import spmatrix

from utils.timing import PhaseTimer

from ..complex_kernels import KernelBackend
from ..measurement_model import (
    ConstraintSpec,
    Measurement,
    MeasurementSet,
    eval_constraints,
    eval_h,
    strip_pseudo,
)
from ..network_model import AdmittanceMatrix, Network, StateVector, build_admittance
from ..sparse_assembly import dump_coordinates, matrix_stats

logger = logging.getLogger(__name__)


class EstimatorType(Enum):
    """Available state estimators."""
    CEC = "cec"     # Complex equality constrained
    CNE = "cne"     # Complex normal equations, pseudo-measurement constraints
    REC = "rec"     # Real equality constrained, polar coordinates


@dataclass
class EstimatorConfig:
    """Configuration shared by all estimators."""

    estimator_type: EstimatorType = EstimatorType.CEC

    # Iteration control
    tolerance: float = 1e-6
    max_iterations: int = 25
    flat_start: bool = True
    damping: bool = False
    max_halvings: int = 5

    # Pseudo-measurement weight for zero injections and slack angle (CNE)
    cne_pseudo_weight: float = 25.0

    # Linear algebra
    pivot_threshold: float = 0.1
    ill_conditioning_threshold: float = 1e12
    kernel_backend: KernelBackend = KernelBackend.VECTOR

    # Post-convergence sanity bound on |u_i|
    state_magnitude_bound: float = 2.0

    # Coordinate dump of the first assembled matrix
    dump_matrix: Optional[Path] = None

    def __post_init__(self) -> None:
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be at least 1, got {self.max_iterations}")
        if not self.cne_pseudo_weight > 0:
            raise ValueError("cne_pseudo_weight must be positive")

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["estimator_type"] = self.estimator_type.value
        data["kernel_backend"] = self.kernel_backend.value
        data["dump_matrix"] = str(self.dump_matrix) if self.dump_matrix else None
        return data


@dataclass
class EstimationProblem:
    """Resolved inputs of one estimation run."""

    net: Network
    Y: AdmittanceMatrix
    mset: MeasurementSet
    cs: ConstraintSpec

    @property
    def weight_scale(self) -> float:
        """Largest measurement weight. Matrices are assembled with W / weight_scale."""
        weights = self.mset.weight
        return float(np.max(weights)) if weights.size else 1.0

    def scaled(self, weights: np.ndarray) -> np.ndarray:
        """Weights (measurement or pseudo) on the normalized scale; minimizers do not change."""
        return np.asarray(weights, dtype=np.float64) / self.weight_scale


@dataclass
class StepOutcome:
    """One linearize-assemble-solve step."""

    du: np.ndarray
    matrix: spmatrix
    multipliers: Optional[np.ndarray] = None
    conjugate_multipliers: Optional[np.ndarray] = None
    pivot_ratio: float = 1.0
    conjugate_pair_error: float = 0.0


@dataclass
class EstimationResult:
    """Result of an estimation run."""

    estimator: str
    state: StateVector
    iterations: int
    converged: bool
    step_norms: list[float]
    objective: float
    timing: dict[str, float]
    matrix_size: int = 0
    matrix_nnz: int = 0
    max_constraint_mismatch: float = 0.0
    multipliers: Optional[np.ndarray] = None
    conjugate_multipliers: Optional[np.ndarray] = None
    linear_model: bool = False
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def solve_time_ms(self) -> float:
        """Assembly + factorization + solve time, the figure reported in tables."""
        return sum(self.timing.get(k, 0.0) for k in ("jacobian", "assembly", "factor", "solve"))

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "estimator": self.estimator,
            "converged": self.converged,
            "iterations": self.iterations,
            "linear_model": self.linear_model,
            "step_norms": [float(v) for v in self.step_norms],
            "objective": self.objective,
            "max_constraint_mismatch": self.max_constraint_mismatch,
            "matrix_size": self.matrix_size,
            "matrix_nnz": self.matrix_nnz,
            "timing_ms": dict(self.timing),
            "state": self.state.to_dict(),
        }
        if self.multipliers is not None:
            data["multipliers"] = [[float(v.real), float(v.imag)] for v in self.multipliers]
        if self.conjugate_multipliers is not None:
            data["conjugate_multipliers"] = [
                [float(v.real), float(v.imag)] for v in self.conjugate_multipliers
            ]
        if self.diagnostics:
            data["diagnostics"] = self.diagnostics
        return data

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def check_convergence(step: Sequence[complex] | np.ndarray, tolerance: float) -> bool:
    """True iff max_i |Δx_i| < tolerance (complex modulus)."""
    step = np.asarray(step)
    if step.size == 0:
        return True
    return bool(np.max(np.abs(step)) < tolerance)


class StateEstimator(ABC):
    """
    Abstract base class for state estimators.

    All estimators share one loop:
    1. Linearize at the current state and solve for a step
    2. Update the state (optionally halving the step)
    3. Stop when max |Δu| < tolerance or the iteration cap is hit
    """

    def __init__(self, config: EstimatorConfig):
        self.config = config

    @property
    @abstractmethod
    def name(self) -> str:
        """Short estimator name."""
        pass

    @property
    @abstractmethod
    def description(self) -> str:
        """Estimator description for help text."""
        pass

    @abstractmethod
    def step(self, problem: EstimationProblem, u: np.ndarray, timer: PhaseTimer) -> StepOutcome:
        """
        Linearize at `u` and solve for the state update.

        Args:
            problem: Resolved inputs.
            u: Current complex node voltages.
            timer: Accumulates jacobian / assembly / factor / solve phases.

        Returns:
            StepOutcome with the complex voltage update.
        """
        pass

    def objective(self, problem: EstimationProblem, u: np.ndarray) -> float:
        """Weighted residual sum Σ w_i |z_i - h_i(u)|²."""
        r = problem.mset.z - eval_h(u, problem.mset, problem.Y)
        return float(np.sum(problem.mset.weight * np.abs(r) ** 2))

    def is_linear(self, problem: EstimationProblem) -> bool:
        """Whether one exact step solves the problem (PMU rows + slack only)."""
        return False

    def prepare(
        self,
        net: Network,
        measurements: Sequence[Measurement],
        cs: Optional[ConstraintSpec] = None,
    ) -> EstimationProblem:
        """
        Resolve measurements against the network.

        ZeroInjectionPseudo rows are carried by the constraint spec, not by
        the measurement set.
        """
        Y = build_admittance(net)
        if cs is None:
            cs = ConstraintSpec.from_network(net, measurements)
        mset = MeasurementSet.build(strip_pseudo(measurements), Y)
        return EstimationProblem(net=net, Y=Y, mset=mset, cs=cs)

    def _initial_state(self, net: Network, initial: Optional[np.ndarray]) -> np.ndarray:
        if initial is not None:
            u = np.asarray(initial, dtype=np.complex128).copy()
            if u.shape != (net.n_nodes,):
                raise ValueError(f"initial state must have length {net.n_nodes}")
            return u
        if not self.config.flat_start:
            raise ValueError("flat_start is disabled and no initial state was given")
        return np.ones(net.n_nodes, dtype=np.complex128)

    def _damped(self, problem: EstimationProblem, u: np.ndarray, du: np.ndarray) -> np.ndarray:
        current = self.objective(problem, u)
        for _ in range(self.config.max_halvings):
            if self.objective(problem, u + du) <= current:
                break
            du = 0.5 * du
            logger.debug("%s: objective increased, halving step", self.name)
        return du

    def estimate(
        self,
        net: Network,
        measurements: Sequence[Measurement],
        cs: Optional[ConstraintSpec] = None,
        initial: Optional[np.ndarray] = None,
    ) -> EstimationResult:
        """
        Run the estimator.

        Args:
            net: Validated network.
            measurements: Measurement list (ZeroInjectionPseudo rows allowed).
            cs: Constraint spec; derived from the network when omitted.
            initial: Optional starting state; flat start otherwise.

        Returns:
            EstimationResult. Hitting the iteration cap gives converged=False.

        Raises:
            SingularSystemError: unobservable network or dependent constraints.
        """
        cfg = self.config
        problem = self.prepare(net, measurements, cs)
        timer = PhaseTimer()
        u = self._initial_state(net, initial)
        linear = self.is_linear(problem)

        step_norms: list[float] = []
        converged = False
        outcome: Optional[StepOutcome] = None
        size = nnz = 0
        worst_pair_error = 0.0

        for iteration in range(1, cfg.max_iterations + 1):
            outcome = self.step(problem, u, timer)
            if iteration == 1:
                size, nnz = matrix_stats(outcome.matrix)
                if cfg.dump_matrix is not None:
                    dump_coordinates(outcome.matrix, cfg.dump_matrix)
            du = outcome.du
            if cfg.damping and not linear:
                du = self._damped(problem, u, du)
            u = u + du
            worst_pair_error = max(worst_pair_error, outcome.conjugate_pair_error)

            norm = float(np.max(np.abs(du))) if du.size else 0.0
            step_norms.append(norm)
            logger.debug("%s iteration %d: max|du|=%.3e", self.name, iteration, norm)

            if not np.all(np.isfinite(u)):
                logger.warning("%s: non-finite state at iteration %d", self.name, iteration)
                break
            if linear or check_convergence(du, cfg.tolerance):
                converged = True
                break

        state = StateVector(u, net.node_ids)
        k = problem.cs.n_zero_injection
        mismatch = 0.0
        if k and state.is_finite():
            s, _, _ = eval_constraints(u, problem.cs, problem.Y)
            mismatch = float(np.max(np.abs(s[:k])))

        diagnostics: dict[str, Any] = {"conjugate_pair_error": worst_pair_error}
        if outcome is not None:
            diagnostics["pivot_ratio"] = outcome.pivot_ratio
        if converged and not state.within_bound(cfg.state_magnitude_bound):
            logger.warning("%s: state magnitude outside (0, %.2f)", self.name, cfg.state_magnitude_bound)
            diagnostics["magnitude_bound_violated"] = True

        if converged:
            logger.info("%s converged in %d iterations", self.name, len(step_norms))
        else:
            logger.info("%s did not converge after %d iterations (last step %.3e)",
                        self.name, len(step_norms), step_norms[-1] if step_norms else float("nan"))

        return EstimationResult(
            estimator=self.name,
            state=state,
            iterations=len(step_norms),
            converged=converged,
            step_norms=step_norms,
            objective=self.objective(problem, u) if state.is_finite() else float("inf"),
            timing=timer.to_dict(),
            matrix_size=size,
            matrix_nnz=nnz,
            max_constraint_mismatch=mismatch,
            multipliers=None if outcome is None else outcome.multipliers,
            conjugate_multipliers=None if outcome is None else outcome.conjugate_multipliers,
            linear_model=linear and converged,
            diagnostics=diagnostics,
        )
