"""
Real-variable equality-constrained (REC) estimator.

Baseline in polar coordinates (θ, V) with real arithmetic and its own
measurement model:
- SCADA power: a P row and a Q row, each with the meter weight
- SCADA voltage: the magnitude V_i = sqrt(z) with weight 4·z·w, the
  first-order equivalent of w on V_i²
- PMU voltage: a magnitude row |V_i| with weight w and an angle row θ_i with
  weight w·|z|²
- PMU current: a magnitude row |I_km| with weight w. The current angle is
  not used: in polar coordinates it is a difference of phase references
  through the branch admittance, ill-conditioned at light flow, and the
  conventional real-variable estimator treats the phasor as an ammeter
- zero injections give two real constraints Re s_i = Im s_i = 0
- the slack angle is fixed by θ_s = 0

Each iteration solves

    [ HᵀWH  Cᵀ ] [Δ]   [ HᵀW r ]
    [ C     0  ] [λ] = [  -c   ]

and the step reported to the shared loop is the complex voltage change,
so the convergence test matches the complex estimators.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import bmat, csr_matrix, diags, hstack, vstack

from utils.timing import PhaseTimer

from ..measurement_model import (
    MeasurementKind,
    eval_constraints,
    eval_h_and_jacobians,
    polar_jacobian,
)
from ..sparse_assembly import solve_with_refinement
from .base import EstimationProblem, EstimatorConfig, EstimatorType, StateEstimator, StepOutcome

logger = logging.getLogger(__name__)

K = MeasurementKind

# A current row is used once its computed magnitude reaches this share of the
# reading; at flat start the computed currents are only charging currents
CURRENT_ACTIVATION = 0.1
CURRENT_MAGNITUDE_FLOOR = 1e-9


@dataclass
class RecConfig(EstimatorConfig):
    """Configuration for the REC estimator."""

    estimator_type: EstimatorType = EstimatorType.REC


@dataclass
class _RealRows:
    residual: np.ndarray
    jacobian: csr_matrix
    weight: np.ndarray


class RecEstimator(StateEstimator):
    """Polar real-variable Gauss-Newton with equality-constrained normal equations."""

    def __init__(self, config: Optional[RecConfig] = None):
        super().__init__(config or RecConfig())

    @property
    def name(self) -> str:
        return "REC"

    @property
    def description(self) -> str:
        return "Real polar-coordinate estimator with equality constraints (baseline)"

    def _measurement_rows(self, problem: EstimationProblem, u: np.ndarray) -> _RealRows:
        mset = problem.mset
        n = problem.Y.n
        h, Hx, Hxbar = eval_h_and_jacobians(u, mset, problem.Y)
        d_theta, d_mag = polar_jacobian(Hx, Hxbar, u)
        polar = hstack([d_theta, d_mag], format="csr")
        theta, mag = np.angle(u), np.abs(u)
        z, w = mset.z, mset.weight

        def unit_rows(rows: np.ndarray, offset: int) -> csr_matrix:
            return csr_matrix(
                (np.ones(rows.size), (np.arange(rows.size), offset + mset.node[rows])),
                shape=(rows.size, 2 * n),
            )

        residual: list[np.ndarray] = []
        jacobian: list[csr_matrix] = []
        weight: list[np.ndarray] = []

        power = mset.rows_of(K.SCADA_POWER_INJECTION, K.SCADA_POWER_FLOW)
        r = z[power] - h[power]
        residual += [r.real, r.imag]
        jacobian += [polar[power].real, polar[power].imag]
        weight += [w[power], w[power]]

        voltage = mset.rows_of(K.SCADA_VOLTAGE_MAG_SQ)
        v_meas = np.sqrt(np.maximum(z[voltage].real, 0.0))
        residual.append(v_meas - mag[mset.node[voltage]])
        jacobian.append(unit_rows(voltage, n))
        weight.append(4.0 * w[voltage] * v_meas ** 2)

        pmu_v = mset.rows_of(K.PMU_VOLTAGE)
        nodes = mset.node[pmu_v]
        residual += [np.abs(z[pmu_v]) - mag[nodes], np.angle(z[pmu_v] * np.exp(-1j * theta[nodes]))]
        jacobian += [unit_rows(pmu_v, n), unit_rows(pmu_v, 0)]
        weight += [w[pmu_v], w[pmu_v] * np.abs(z[pmu_v]) ** 2]

        # d|I| = Re(Ī dI) / |I|
        pmu_i = mset.rows_of(K.PMU_CURRENT_FLOW)
        if pmu_i.size:
            current = h[pmu_i]
            size = np.abs(current)
            live = size > np.maximum(CURRENT_MAGNITUDE_FLOOR, CURRENT_ACTIVATION * np.abs(z[pmu_i]))
            direction = np.divide(np.conj(current), size, out=np.zeros_like(current), where=live)
            residual.append(np.where(live, np.abs(z[pmu_i]) - size, 0.0))
            jacobian.append((diags(direction) @ polar[pmu_i]).real.tocsr())
            weight.append(np.where(live, w[pmu_i], 0.0))

        return _RealRows(
            residual=np.concatenate(residual),
            jacobian=vstack(jacobian, format="csr"),
            weight=np.concatenate(weight),
        )

    def _constraint_rows(self, problem: EstimationProblem, u: np.ndarray) -> tuple[np.ndarray, csr_matrix]:
        s, Jx, Jxbar = eval_constraints(u, problem.cs, problem.Y)
        k = problem.cs.n_zero_injection
        n = problem.Y.n
        d_theta, d_mag = polar_jacobian(Jx[:k], Jxbar[:k], u)
        zi_jac = hstack([d_theta, d_mag], format="csr")
        slack = problem.net.slack_index
        slack_jac = csr_matrix(([1.0], ([0], [slack])), shape=(1, 2 * n))
        values = np.concatenate([s[:k].real, s[:k].imag, [np.angle(u[slack])]])
        jac = vstack([zi_jac.real, zi_jac.imag, slack_jac], format="csr")
        return values, jac

    def objective(self, problem: EstimationProblem, u: np.ndarray) -> float:
        rows = self._measurement_rows(problem, u)
        return float(np.sum(rows.weight * rows.residual ** 2))

    def step(self, problem: EstimationProblem, u: np.ndarray, timer: PhaseTimer) -> StepOutcome:
        with timer.phase("jacobian"):
            rows = self._measurement_rows(problem, u)
            c_val, C = self._constraint_rows(problem, u)

        with timer.phase("assembly"):
            H = rows.jacobian
            HtW = H.T @ diags(problem.scaled(rows.weight))
            gain = (HtW @ H).tocsr()
            matrix = bmat([[gain, C.T], [C, None]], format="csc")
            rhs = np.concatenate([HtW @ rows.residual, -c_val])

        sol, _, ratio = solve_with_refinement(matrix, rhs, self.config.pivot_threshold, timer)

        n = problem.Y.n
        theta = np.angle(u) + sol[:n]
        mag = np.abs(u) + sol[n:2 * n]
        u_new = mag * np.exp(1j * theta)
        return StepOutcome(
            du=u_new - u,
            matrix=matrix,
            multipliers=sol[2 * n:].astype(np.complex128),
            pivot_ratio=ratio,
        )


def create_rec_estimator(**kwargs) -> RecEstimator:
    """
    Create a REC estimator.

    Args:
        **kwargs: RecConfig fields.
    """
    return RecEstimator(RecConfig(**kwargs))
