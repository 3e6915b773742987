"""
Power Flow Module.

Complex Newton power flow used to produce true states for simulation and
stress sweeps. Every non-slack node is a PQ node with its specified
injection; the mismatch equations are the injection measurement functions,
so the Jacobian comes straight from the Wirtinger machinery:

    [ A   B ] [Δu]     [ F ]
    [ B̄   Ā ] [Δū] = - [ F̄ ]      A = ∂F/∂u, B = ∂F/∂ū
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import bmat

from .errors import PowerFlowDivergedError, SingularSystemError
from .measurement_model import Measurement, MeasurementKind, MeasurementSet, eval_h_and_jacobians
from .network_model import AdmittanceMatrix, Network, StateVector, build_admittance
from .sparse_assembly import solve_with_refinement

logger = logging.getLogger(__name__)


@dataclass
class PowerFlowConfig:
    """Configuration for the Newton power flow."""
    tolerance: float = 1e-10      # max |S_spec - s(u)| per-unit
    max_iterations: int = 30
    pivot_threshold: float = 0.1


@dataclass
class PowerFlowResult:
    """Converged power flow."""
    state: StateVector
    iterations: int
    mismatch_norms: list[float] = field(default_factory=list)

    def min_voltage(self) -> tuple[str, float]:
        """(node id, magnitude) of the lowest voltage magnitude."""
        mags = np.abs(self.state.u)
        i = int(np.argmin(mags))
        return self.state.node_ids[i], float(mags[i])


def _injection_set(net: Network, Y: AdmittanceMatrix, nodes: np.ndarray) -> MeasurementSet:
    spec = net.injections()
    rows = [
        Measurement(
            kind=MeasurementKind.SCADA_POWER_INJECTION,
            value=complex(spec[i]),
            sigma=0.0,
            weight=1.0,
            node=net.nodes[i].id,
        )
        for i in nodes
    ]
    return MeasurementSet.build(rows, Y)


def solve_power_flow(
    net: Network,
    cfg: Optional[PowerFlowConfig] = None,
    initial: Optional[np.ndarray] = None,
) -> PowerFlowResult:
    """
    Solve the PQ power flow with the slack voltage fixed at net.v_slack.

    Args:
        net: Network with specified loads and generation.
        cfg: Solver settings.
        initial: Optional starting voltages (flat start otherwise).

    Returns:
        PowerFlowResult with the solved state.

    Raises:
        PowerFlowDivergedError: mismatch not below tolerance within the
            iteration cap, singular Jacobian or non-finite iterate.
    """
    cfg = cfg or PowerFlowConfig()
    Y = build_admittance(net)
    slack = net.slack_index
    pq = np.array([i for i in range(net.n_nodes) if i != slack], dtype=np.int64)
    mset = _injection_set(net, Y, pq)

    u = np.ones(net.n_nodes, dtype=np.complex128) if initial is None else np.array(initial, dtype=np.complex128)
    u[slack] = net.v_slack
    norms: list[float] = []

    if pq.size == 0:
        return PowerFlowResult(StateVector(u, net.node_ids), 0, norms)

    for iteration in range(cfg.max_iterations + 1):
        h, Hx, Hxbar = eval_h_and_jacobians(u, mset, Y)
        F = h - mset.z
        norm = float(np.max(np.abs(F)))
        norms.append(norm)
        logger.debug("power flow iteration %d: max mismatch %.3e", iteration, norm)
        if not np.isfinite(norm):
            raise PowerFlowDivergedError("power flow produced a non-finite state", iteration)
        if norm < cfg.tolerance:
            logger.info("power flow converged in %d iterations", iteration)
            return PowerFlowResult(StateVector(u, net.node_ids), iteration, norms)
        if iteration == cfg.max_iterations:
            break

        A = Hx[:, pq]
        B = Hxbar[:, pq]
        matrix = bmat([[A, B], [B.conjugate(), A.conjugate()]], format="csc")
        rhs = -np.concatenate([F, np.conj(F)])
        try:
            sol, _, _ = solve_with_refinement(matrix, rhs, cfg.pivot_threshold)
        except SingularSystemError as e:
            raise PowerFlowDivergedError(f"power flow Jacobian is singular: {e}", iteration) from e
        u[pq] += sol[:pq.size]

    raise PowerFlowDivergedError(
        f"power flow did not converge in {cfg.max_iterations} iterations "
        f"(mismatch {norms[-1]:.3e})",
        cfg.max_iterations,
    )
