"""
Benchmark Harness Module.

Monte-Carlo accuracy comparison and load stress sweeps of the estimators.

Indices per trial:
- ξ_z  = Σ|z_est - z_true|² / Σ|z_meas - z_true|²   (measurement filtering)
- σ_x² = Σ|x_est - x_true|²                          (state error)

Ratios over trial means:
- PIF-CNE = mean(CNE) / mean(CEC), PIF-REC = mean(REC) / mean(CEC)
- SUF     = mean time CNE / mean time CEC
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Optional, Sequence

import numpy as np

from .errors import DegenerateIndexError, PowerFlowDivergedError, SingularSystemError
from .estimators import EstimatorConfig, EstimatorType, create_estimator
from .estimators.base import EstimationResult
from .measurement_model import ConstraintSpec, Measurement, MeasurementSet, eval_h, strip_pseudo
from .network_model import Network, StateVector, build_admittance, scale_loads
from .power_flow import PowerFlowConfig, solve_power_flow
from .simulation import NoiseSpec, Placement, simulate_measurements

logger = logging.getLogger(__name__)

DEFAULT_ESTIMATORS = (EstimatorType.CEC, EstimatorType.CNE, EstimatorType.REC)
STRESS_TOLERANCE = 1e-7


@dataclass
class TrialReport:
    """Indices and cost of one estimator on one trial."""

    xi_z: Optional[float]
    sigma_x2: float
    estimator: str = ""
    trial: int = 0
    iterations: int = 0
    time_ms: float = 0.0
    converged: bool = True
    max_constraint_mismatch: float = 0.0

    def __post_init__(self) -> None:
        if self.xi_z is not None and self.xi_z < 0:
            raise ValueError("xi_z must be non-negative")
        if self.sigma_x2 < 0:
            raise ValueError("sigma_x2 must be non-negative")


def perf_indices(
    z_meas: np.ndarray,
    z_est: np.ndarray,
    z_true: np.ndarray,
    x_est: np.ndarray,
    x_true: np.ndarray,
) -> TrialReport:
    """
    Compute ξ_z and σ_x² with complex moduli.

    Raises:
        ValueError: length mismatch.
        DegenerateIndexError: Σ|z_meas - z_true|² is zero.
    """
    z_meas, z_est, z_true = (np.asarray(v, dtype=np.complex128) for v in (z_meas, z_est, z_true))
    x_est, x_true = (np.asarray(v, dtype=np.complex128) for v in (x_est, x_true))
    if not (z_meas.shape == z_est.shape == z_true.shape) or x_est.shape != x_true.shape:
        raise ValueError("index inputs differ in length")
    denominator = float(np.sum(np.abs(z_meas - z_true) ** 2))
    if denominator == 0.0:
        raise DegenerateIndexError("measurement error index undefined: measurements are noise-free")
    return TrialReport(
        xi_z=float(np.sum(np.abs(z_est - z_true) ** 2)) / denominator,
        sigma_x2=float(np.sum(np.abs(x_est - x_true) ** 2)),
    )


@dataclass
class EstimatorSummary:
    """Means over the successful trials of one estimator."""

    estimator: str
    trials: int = 0
    failures: int = 0
    xi_z: Optional[float] = None
    sigma_x2: Optional[float] = None
    iterations: Optional[float] = None
    time_ms: Optional[float] = None
    matrix_size: int = 0
    matrix_nnz: int = 0


@dataclass
class ComparisonReport:
    """Aggregated Monte-Carlo comparison."""

    name: str
    trials: int
    summaries: dict[str, EstimatorSummary]
    reports: list[TrialReport] = field(default_factory=list)
    failures: dict[str, list[str]] = field(default_factory=dict)

    def _ratio(self, attr: str, numerator: str, denominator: str = "CEC") -> Optional[float]:
        num = self.summaries.get(numerator)
        den = self.summaries.get(denominator)
        if num is None or den is None:
            return None
        a, b = getattr(num, attr), getattr(den, attr)
        if a is None or b is None or b <= 0:
            return None
        return a / b

    @property
    def pif_cne_xi(self) -> Optional[float]:
        return self._ratio("xi_z", "CNE")

    @property
    def pif_rec_xi(self) -> Optional[float]:
        return self._ratio("xi_z", "REC")

    @property
    def pif_cne_sigma(self) -> Optional[float]:
        return self._ratio("sigma_x2", "CNE")

    @property
    def pif_rec_sigma(self) -> Optional[float]:
        return self._ratio("sigma_x2", "REC")

    @property
    def suf(self) -> Optional[float]:
        return self._ratio("time_ms", "CNE")

    def to_dict(self, include_trials: bool = False) -> dict[str, Any]:
        data: dict[str, Any] = {
            "name": self.name,
            "trials": self.trials,
            "summaries": {k: asdict(v) for k, v in self.summaries.items()},
            "pif_cne_xi": self.pif_cne_xi,
            "pif_rec_xi": self.pif_rec_xi,
            "pif_cne_sigma": self.pif_cne_sigma,
            "pif_rec_sigma": self.pif_rec_sigma,
            "suf": self.suf,
            "failures": self.failures,
        }
        if include_trials:
            data["reports"] = [asdict(r) for r in self.reports]
        return data


@dataclass
class StressRow:
    """One load multiplier of a stress sweep."""

    multiplier: float
    feasible: bool
    min_voltage_node: Optional[str] = None
    min_voltage: Optional[float] = None
    iterations: dict[str, int] = field(default_factory=dict)
    converged: dict[str, bool] = field(default_factory=dict)
    step_norms: dict[str, list[float]] = field(default_factory=dict)
    message: str = ""

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _constraint_spec(net: Network, use_zero_injection: bool) -> ConstraintSpec:
    if use_zero_injection:
        return ConstraintSpec.from_network(net)
    return ConstraintSpec((), net.slack)


def _config_kwargs(cfg: EstimatorConfig, **overrides) -> dict[str, Any]:
    kwargs = {name: getattr(cfg, name) for name in EstimatorConfig.__dataclass_fields__}
    kwargs.pop("estimator_type")
    kwargs.update(overrides)
    return kwargs


def _measured_values(
    measurements: Sequence[Measurement],
    net: Network,
    x_true: np.ndarray,
) -> tuple[MeasurementSet, np.ndarray]:
    Y = build_admittance(net)
    mset = MeasurementSet.build(strip_pseudo(measurements), Y)
    return mset, eval_h(x_true, mset, Y)


def evaluate_trial(
    result: EstimationResult,
    mset: MeasurementSet,
    net: Network,
    z_true: np.ndarray,
    x_true: np.ndarray,
    trial: int = 0,
) -> TrialReport:
    """Indices of one estimation result; ξ_z is None for noise-free input."""
    z_est = eval_h(result.state.u, mset, build_admittance(net))
    try:
        report = perf_indices(mset.z, z_est, z_true, result.state.u, x_true)
        xi_z: Optional[float] = report.xi_z
        sigma = report.sigma_x2
    except DegenerateIndexError:
        xi_z = None
        sigma = float(np.sum(np.abs(result.state.u - x_true) ** 2))
    return TrialReport(
        xi_z=xi_z,
        sigma_x2=sigma,
        estimator=result.estimator,
        trial=trial,
        iterations=result.iterations,
        time_ms=result.solve_time_ms,
        converged=result.converged,
        max_constraint_mismatch=result.max_constraint_mismatch,
    )


def _run_trial(
    trial: int,
    net: Network,
    placement: Placement,
    x_true: np.ndarray,
    estimators: Sequence[EstimatorType],
    noise: NoiseSpec,
    cfg: EstimatorConfig,
    cs: ConstraintSpec,
    use_zero_injection: bool,
) -> tuple[list[TrialReport], dict[str, str], dict[str, tuple[int, int]]]:
    trial_noise = replace(noise, seed=noise.seed + trial)
    measurements = simulate_measurements(
        x_true, net, placement, trial_noise, include_zero_injection=use_zero_injection
    )
    mset, z_true = _measured_values(measurements, net, x_true)

    reports: list[TrialReport] = []
    failures: dict[str, str] = {}
    sizes: dict[str, tuple[int, int]] = {}
    for estimator_type in estimators:
        estimator = create_estimator(estimator_type, **_config_kwargs(cfg))
        try:
            result = estimator.estimate(net, measurements, cs)
        except SingularSystemError as e:
            failures[estimator.name] = str(e)
            continue
        if not result.converged:
            failures[estimator.name] = f"no convergence in {result.iterations} iterations"
            continue
        sizes[estimator.name] = (result.matrix_size, result.matrix_nnz)
        reports.append(evaluate_trial(result, mset, net, z_true, x_true, trial))
    return reports, failures, sizes


def _mean(values: list[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def monte_carlo(
    net: Network,
    placement: Placement,
    estimators: Sequence[EstimatorType] = DEFAULT_ESTIMATORS,
    trials: int = 200,
    noise: Optional[NoiseSpec] = None,
    cfg: Optional[EstimatorConfig] = None,
    workers: int = 1,
    use_zero_injection: bool = True,
    true_state: Optional[StateVector] = None,
) -> ComparisonReport:
    """
    Run every estimator on identical noisy measurement sets.

    Trial t draws its noise with seed noise.seed + t. Failed or
    non-converged runs are excluded from the means and counted.

    Args:
        net: Network.
        placement: Meter placement.
        estimators: Estimators to compare.
        trials: Number of noise realizations (>= 1).
        noise: Noise levels and base seed.
        cfg: Shared estimator configuration.
        workers: Threads; results do not depend on this.
        use_zero_injection: Enforce the network's zero injections.
        true_state: Reference state; solved by power flow when omitted.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    noise = noise or NoiseSpec()
    cfg = cfg or EstimatorConfig()
    placement.validate(net)
    x_true = (true_state or solve_power_flow(net).state).u
    cs = _constraint_spec(net, use_zero_injection)

    def run(trial: int):
        return _run_trial(trial, net, placement, x_true, estimators, noise, cfg, cs, use_zero_injection)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, range(trials)))
    else:
        outcomes = [run(t) for t in range(trials)]

    names = [create_estimator(e).name for e in estimators]
    summaries = {name: EstimatorSummary(estimator=name) for name in names}
    all_reports: list[TrialReport] = []
    failures: dict[str, list[str]] = {name: [] for name in names}
    for trial, (reports, trial_failures, sizes) in enumerate(outcomes):
        all_reports.extend(reports)
        for name, message in trial_failures.items():
            failures[name].append(f"trial {trial}: {message}")
            logger.warning("%s failed on trial %d: %s", name, trial, message)
        for name, (size, nnz) in sizes.items():
            summaries[name].matrix_size, summaries[name].matrix_nnz = size, nnz

    for name, summary in summaries.items():
        mine = [r for r in all_reports if r.estimator == name]
        summary.trials = len(mine)
        summary.failures = len(failures[name])
        summary.xi_z = _mean([r.xi_z for r in mine if r.xi_z is not None])
        summary.sigma_x2 = _mean([r.sigma_x2 for r in mine])
        summary.iterations = _mean([float(r.iterations) for r in mine])
        summary.time_ms = _mean([r.time_ms for r in mine])

    report = ComparisonReport(
        name=placement.name or net.name,
        trials=trials,
        summaries=summaries,
        reports=all_reports,
        failures={k: v for k, v in failures.items() if v},
    )
    logger.info("monte carlo %s: %d trials, PIF-CNE %s, PIF-REC %s",
                report.name, trials, report.pif_cne_xi, report.pif_rec_xi)
    return report


def stress_sweep(
    net: Network,
    placement: Placement,
    multipliers: Sequence[float],
    estimators: Sequence[EstimatorType] = (EstimatorType.CEC, EstimatorType.REC),
    cfg: Optional[EstimatorConfig] = None,
    noise: Optional[NoiseSpec] = None,
    use_zero_injection: bool = True,
    pf_cfg: Optional[PowerFlowConfig] = None,
) -> list[StressRow]:
    """
    Scale every load uniformly, re-solve the power flow and re-estimate.

    Estimators run with tolerance 1e-7. A multiplier whose power flow
    diverges gives a row marked infeasible.
    """
    if any(m < 1.0 for m in multipliers):
        raise ValueError("load multipliers must be >= 1")
    cfg = cfg or EstimatorConfig()
    noise = noise or NoiseSpec()
    placement.validate(net)
    rows: list[StressRow] = []
    previous: Optional[np.ndarray] = None

    for multiplier in multipliers:
        scaled = scale_loads(net, multiplier)
        try:
            flow = solve_power_flow(scaled, pf_cfg, initial=previous)
        except PowerFlowDivergedError as e:
            logger.warning("load multiplier %.4f infeasible: %s", multiplier, e)
            rows.append(StressRow(multiplier=multiplier, feasible=False, message=str(e)))
            continue
        previous = flow.state.u
        node_id, v_min = flow.min_voltage()
        row = StressRow(multiplier=multiplier, feasible=True, min_voltage_node=node_id, min_voltage=v_min)

        measurements = simulate_measurements(
            flow.state, scaled, placement, noise, include_zero_injection=use_zero_injection
        )
        cs = _constraint_spec(scaled, use_zero_injection)
        for estimator_type in estimators:
            estimator = create_estimator(estimator_type, **_config_kwargs(cfg, tolerance=STRESS_TOLERANCE))
            try:
                result = estimator.estimate(scaled, measurements, cs)
            except SingularSystemError as e:
                row.iterations[estimator.name] = 0
                row.converged[estimator.name] = False
                row.message = str(e)
                continue
            row.iterations[estimator.name] = result.iterations
            row.converged[estimator.name] = result.converged
            row.step_norms[estimator.name] = list(result.step_norms)
        rows.append(row)
        logger.info("load multiplier %.4f: min |V| %.4f at %s, iterations %s",
                    multiplier, v_min, node_id, row.iterations)
    return rows


def finite_or_none(value: Optional[float]) -> Optional[float]:
    if value is None or not math.isfinite(value):
        return None
    return value
