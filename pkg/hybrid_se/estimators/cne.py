"""
Complex normal equations (CNE) estimator.

Zero injections and the slack angle are appended to the measurement set
as pseudo-measurements with value zero and weight cne_pseudo_weight, on
the same per-unit scale as the meter weights; the plain 2n gain system is
solved every iteration.

The stacked gain counts every row together with its conjugate, a complex
row as (s, s̄) and the real slack row as (s, s), so each pseudo-row enters
with the same relative weight it has in the objective w·Σ|s|².
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix, vstack

from utils.timing import PhaseTimer

from ..measurement_model import build_system, eval_constraints
from ..sparse_assembly import assemble_gain, assemble_kkt, factor_solve
from .base import EstimationProblem, EstimatorConfig, EstimatorType, StateEstimator, StepOutcome

logger = logging.getLogger(__name__)


@dataclass
class CneConfig(EstimatorConfig):
    """Configuration for the CNE estimator."""

    estimator_type: EstimatorType = EstimatorType.CNE


class CneEstimator(StateEstimator):
    """Hybrid estimator with constraints weighted in as pseudo-measurements."""

    def __init__(self, config: Optional[CneConfig] = None):
        super().__init__(config or CneConfig())

    @property
    def name(self) -> str:
        return "CNE"

    @property
    def description(self) -> str:
        return "Complex normal equations, zero injections as weighted pseudo-measurements"

    def is_linear(self, problem: EstimationProblem) -> bool:
        return problem.mset.is_linear and problem.cs.n_zero_injection == 0

    def objective(self, problem: EstimationProblem, u: np.ndarray) -> float:
        s, _, _ = eval_constraints(u, problem.cs, problem.Y)
        pseudo = self.config.cne_pseudo_weight * float(np.sum(np.abs(s) ** 2))
        return super().objective(problem, u) + pseudo

    def step(self, problem: EstimationProblem, u: np.ndarray, timer: PhaseTimer) -> StepOutcome:
        with timer.phase("jacobian"):
            system = build_system(u, problem.mset, problem.cs, problem.Y)
            c = system.c
            W = problem.scaled(np.concatenate([system.W, np.full(c, self.config.cne_pseudo_weight)]))
            r = np.concatenate([system.r, -system.s])
            Hx = vstack([system.Hx, system.Jx], format="csr")
            Hxbar = vstack([system.Hxbar, system.Jxbar], format="csr")

        n = system.n
        with timer.phase("assembly"):
            gain = assemble_gain(W, r, Hx, Hxbar, self.config.kernel_backend)
            empty = csr_matrix((0, n), dtype=np.complex128)
            kkt = assemble_kkt(gain, np.zeros(0, dtype=np.complex128), empty, empty)
        sol = factor_solve(kkt, self.config.pivot_threshold, timer)

        if sol.pivot_ratio > self.config.ill_conditioning_threshold:
            logger.warning("CNE: gain matrix ill-conditioned (pivot ratio %.3e)", sol.pivot_ratio)

        return StepOutcome(
            du=sol.dx,
            matrix=kkt.matrix,
            pivot_ratio=sol.pivot_ratio,
            conjugate_pair_error=sol.conjugate_pair_error,
        )


def create_cne_estimator(**kwargs) -> CneEstimator:
    """
    Create a CNE estimator.

    Args:
        **kwargs: CneConfig fields.
    """
    return CneEstimator(CneConfig(**kwargs))
