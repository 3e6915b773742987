"""
Estimator Tests.

Tests:
- Noise-free state recovery for CEC, CNE and REC
- Single-step solution of the PMU-only linear model
- Iteration counts on the 118-node fixture
- Exact zero injections (CEC) versus weighted ones (CNE)
- REC real measurement rows (current magnitudes only)
- Lagrangian stationarity at the CEC solution, objective stationarity at CNE
- Configuration, factory and failure modes
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from hybrid_se.errors import SingularSystemError
from hybrid_se.estimators import (
    ESTIMATOR_MAP,
    CecEstimator,
    CneEstimator,
    EstimatorConfig,
    EstimatorType,
    RecEstimator,
    check_convergence,
    create_estimator,
    run_cec,
    run_cne,
    run_rec,
    stationarity_residual,
)
from hybrid_se.fixtures import fixture_118, placement_instance, small_grid
from hybrid_se.measurement_model import ConstraintSpec, Measurement, MeasurementKind
from hybrid_se.power_flow import solve_power_flow
from hybrid_se.simulation import NoiseSpec, simulate_measurements


@pytest.fixture(scope="module")
def net118():
    return fixture_118()


@pytest.fixture(scope="module")
def true118(net118):
    return solve_power_flow(net118).state


@pytest.fixture(scope="module")
def noisy_a(net118, true118):
    placement = placement_instance(net118, "A", seed=0)
    return simulate_measurements(true118, net118, placement, NoiseSpec(seed=1))


@pytest.fixture(scope="module")
def exact_a(net118, true118):
    placement = placement_instance(net118, "A", seed=0)
    return simulate_measurements(true118, net118, placement, NoiseSpec.noiseless())


class TestConvergenceCheck:
    """Tests for the max-norm stopping rule."""

    def test_zero_step(self):
        assert check_convergence(np.zeros(3, dtype=complex), 1e-6)

    def test_small_step(self):
        assert check_convergence([1e-7 + 0j], 1e-6)

    def test_one_large_component(self):
        assert not check_convergence([1e-7, 2e-6j], 1e-6)

    def test_empty(self):
        assert check_convergence([], 1e-6)


class TestEstimatorFactory:
    """Tests for configuration and the estimator factory."""

    def test_map_covers_all_types(self):
        assert set(ESTIMATOR_MAP.values()) == set(EstimatorType)

    @pytest.mark.parametrize("estimator_type,cls", [
        (EstimatorType.CEC, CecEstimator),
        (EstimatorType.CNE, CneEstimator),
        (EstimatorType.REC, RecEstimator),
    ])
    def test_create(self, estimator_type, cls):
        estimator = create_estimator(estimator_type, tolerance=1e-8)
        assert isinstance(estimator, cls)
        assert estimator.config.tolerance == 1e-8
        assert estimator.name == estimator_type.name
        assert estimator.description

    def test_unknown_type(self):
        with pytest.raises(ValueError, match="Unknown estimator type"):
            create_estimator("kalman")

    def test_invalid_tolerance(self):
        with pytest.raises(ValueError):
            EstimatorConfig(tolerance=0.0)

    def test_invalid_iteration_cap(self):
        with pytest.raises(ValueError):
            EstimatorConfig(max_iterations=0)

    def test_config_to_dict(self):
        data = EstimatorConfig().to_dict()
        assert data["estimator_type"] == "cec"
        assert data["kernel_backend"] == "vector"
        json.dumps(data)


class TestNoiseFreeRecovery:
    """Consistent measurements must reproduce the power-flow state."""

    @pytest.mark.parametrize("runner", [run_cec, run_cne, run_rec])
    def test_recovers_true_state(self, runner, net118, true118, exact_a):
        cfg = EstimatorConfig(tolerance=1e-10)
        result = runner(net118, exact_a, cfg=cfg)
        assert result.converged
        np.testing.assert_allclose(result.state.u, true118.u, atol=1e-8)

    def test_small_grid(self):
        net = small_grid()
        state = solve_power_flow(net).state
        meas = simulate_measurements(state, net, placement_instance(net, "C"), NoiseSpec.noiseless())
        result = run_cec(net, meas, cfg=EstimatorConfig(tolerance=1e-10))
        np.testing.assert_allclose(result.state.u, state.u, atol=1e-8)


class TestLinearModel:
    """PMU-only measurement sets without zero injections."""

    @pytest.fixture(scope="class")
    def pmu_only(self, net118, true118):
        placement = placement_instance(net118, "D")
        noisy = simulate_measurements(true118, net118, placement, NoiseSpec(seed=2),
                                      include_zero_injection=False)
        exact = simulate_measurements(true118, net118, placement, NoiseSpec.noiseless(),
                                      include_zero_injection=False)
        return noisy, exact

    def test_cec_one_iteration(self, net118, pmu_only):
        noisy, _ = pmu_only
        result = run_cec(net118, noisy, ConstraintSpec((), net118.slack))
        assert result.converged
        assert result.iterations == 1
        assert result.linear_model

    def test_cne_one_iteration(self, net118, pmu_only):
        noisy, _ = pmu_only
        result = run_cne(net118, noisy, ConstraintSpec((), net118.slack))
        assert result.iterations == 1
        assert result.linear_model

    def test_cne_matches_cec_on_exact_data(self, net118, true118, pmu_only):
        _, exact = pmu_only
        cs = ConstraintSpec((), net118.slack)
        cec = run_cec(net118, exact, cs)
        cne = run_cne(net118, exact, cs)
        np.testing.assert_allclose(cne.state.u, cec.state.u, atol=1e-6)
        np.testing.assert_allclose(cec.state.u, true118.u, atol=1e-8)

    def test_zero_injection_disables_shortcut(self, net118, true118):
        placement = placement_instance(net118, "D")
        meas = simulate_measurements(true118, net118, placement, NoiseSpec(seed=2))
        result = run_cec(net118, meas)
        assert result.converged
        assert not result.linear_model
        assert result.iterations >= 2


class TestHybridEstimation:
    """SCADA + PMU + zero injections on the 118-node fixture."""

    @pytest.fixture(scope="class")
    def results(self, net118, noisy_a):
        return {
            "CEC": run_cec(net118, noisy_a),
            "CNE": run_cne(net118, noisy_a),
            "REC": run_rec(net118, noisy_a),
        }

    @pytest.mark.parametrize("name", ["CEC", "CNE", "REC"])
    def test_converges_in_few_iterations(self, results, name):
        result = results[name]
        assert result.converged
        assert 3 <= result.iterations <= 6

    def test_cec_zero_injections_exact(self, results):
        assert results["CEC"].max_constraint_mismatch < 1e-8

    def test_cne_zero_injections_approximate(self, results):
        assert results["CNE"].max_constraint_mismatch > results["CEC"].max_constraint_mismatch

    def test_rec_zero_injections_exact(self, results):
        assert results["REC"].max_constraint_mismatch < 1e-8

    def test_estimates_close_to_truth(self, results, true118):
        for result in results.values():
            assert np.max(np.abs(result.state.u - true118.u)) < 0.05

    def test_cec_slack_angle_zero(self, results, net118):
        assert results["CEC"].state.u[net118.slack_index].imag == pytest.approx(0.0, abs=1e-12)

    def test_cec_multipliers(self, results, net118):
        result = results["CEC"]
        k = len(net118.zero_injection_ids)
        assert result.multipliers.shape == (k + 1,)
        assert result.conjugate_multipliers.shape == (k,)
        assert result.diagnostics["conjugate_pair_error"] < 1e-9

    def test_matrix_sizes(self, results, net118):
        n = net118.n_nodes
        k = len(net118.zero_injection_ids)
        assert results["CNE"].matrix_size == 2 * n
        assert results["CEC"].matrix_size == 2 * n + 2 * k + 1
        assert results["CEC"].matrix_nnz > results["CNE"].matrix_nnz

    def test_timing_phases(self, results):
        timing = results["CEC"].timing
        assert {"jacobian", "assembly", "factor", "solve"} <= set(timing)
        assert results["CEC"].solve_time_ms > 0

    def test_result_json(self, results):
        data = json.loads(results["CEC"].to_json())
        assert data["estimator"] == "CEC"
        assert data["converged"] is True
        assert len(data["state"]) == 118


class TestRecMeasurementModel:
    """REC works on its own real rows, not on the complex residuals."""

    def test_current_angle_ignored(self, net118, true118, exact_a):
        rotated = [
            replace(m, value=m.value * np.exp(0.3j)) if m.kind is MeasurementKind.PMU_CURRENT_FLOW else m
            for m in exact_a
        ]
        rec, cec = RecEstimator(), CecEstimator()
        assert rec.objective(rec.prepare(net118, rotated), true118.u) < 1e-20
        moved = sum(m.weight * abs(r.value - m.value) ** 2 for m, r in zip(exact_a, rotated))
        assert moved > 0
        assert cec.objective(cec.prepare(net118, rotated), true118.u) == pytest.approx(moved, rel=1e-6)

    def test_differs_from_complex_estimate(self, net118, true118):
        placement = placement_instance(net118, "C", seed=0)
        meas = simulate_measurements(true118, net118, placement, NoiseSpec(seed=3))
        cec = run_cec(net118, meas)
        rec = run_rec(net118, meas)
        assert cec.converged and rec.converged
        assert np.max(np.abs(rec.state.u - cec.state.u)) > 1e-6
        assert rec.max_constraint_mismatch < 1e-8


class TestStationarity:
    """The CEC solution is a stationary point of the Lagrangian."""

    def test_gradient_vanishes(self, net118, noisy_a):
        result = run_cec(net118, noisy_a, cfg=EstimatorConfig(tolerance=1e-10, max_iterations=40))
        assert result.converged
        assert stationarity_residual(net118, noisy_a, result) < 1e-8

    def test_requires_multipliers(self, net118, noisy_a):
        result = run_cne(net118, noisy_a)
        with pytest.raises(ValueError):
            stationarity_residual(net118, noisy_a, result)


def _objective_gradient(estimator, problem, u: np.ndarray, h: float = 1e-7) -> np.ndarray:
    """Central differences of the objective over Re u and Im u."""
    grad = np.zeros(2 * u.size)
    for i in range(u.size):
        for part, direction in enumerate((1.0, 1j)):
            step = np.zeros_like(u)
            step[i] = h * direction
            grad[2 * i + part] = (
                estimator.objective(problem, u + step) - estimator.objective(problem, u - step)
            ) / (2 * h)
    return grad


class TestCneStationarity:
    """The CNE solution minimizes its own objective, slack pseudo-row included."""

    def test_objective_gradient_vanishes(self, net118, noisy_a):
        estimator = create_estimator(EstimatorType.CNE, tolerance=1e-10, max_iterations=50)
        result = estimator.estimate(net118, noisy_a)
        assert result.converged
        problem = estimator.prepare(net118, noisy_a)
        at_solution = _objective_gradient(estimator, problem, result.state.u)
        rng = np.random.default_rng(0)
        shift = 1e-3 * (rng.standard_normal(net118.n_nodes) + 1j * rng.standard_normal(net118.n_nodes))
        displaced = _objective_gradient(estimator, problem, result.state.u + shift)
        assert np.max(np.abs(at_solution)) < 1e-5 * np.max(np.abs(displaced))


class TestFailureModes:
    """Iteration cap, unobservable sets, options."""

    def test_iteration_cap(self, net118, noisy_a):
        result = run_cec(net118, noisy_a, cfg=EstimatorConfig(max_iterations=1))
        assert not result.converged
        assert result.iterations == 1

    def test_unobservable(self, net118):
        meas = [Measurement(MeasurementKind.PMU_VOLTAGE, 1.0, 0.001, 25.0, node=net118.slack)]
        with pytest.raises(SingularSystemError):
            run_cec(net118, meas)

    def test_no_flat_start_without_initial(self, net118, noisy_a):
        estimator = create_estimator(EstimatorType.CEC, flat_start=False)
        with pytest.raises(ValueError):
            estimator.estimate(net118, noisy_a)

    def test_warm_start(self, net118, true118, noisy_a):
        estimator = create_estimator(EstimatorType.CEC, flat_start=False)
        result = estimator.estimate(net118, noisy_a, initial=true118.u)
        assert result.converged
        assert result.iterations <= 4

    def test_damping(self, net118, noisy_a):
        result = run_cec(net118, noisy_a, cfg=EstimatorConfig(damping=True))
        assert result.converged

    def test_dump_matrix(self, net118, noisy_a, tmp_path: Path):
        path = tmp_path / "kkt.txt"
        result = run_cec(net118, noisy_a, cfg=EstimatorConfig(dump_matrix=path))
        header = path.read_text().splitlines()[0].split()
        assert header[0] == "#"
        assert int(header[1]) == result.matrix_size
