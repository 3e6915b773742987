"""
Benchmark Harness Tests.

Tests:
- Performance indices
- Monte-Carlo comparison (determinism, worker independence, degenerate input)
- Efficiency ordering of the estimators and noise filtering
- Load stress sweep, near the stability edge and on the largest fixture
- CSV / JSON result writers
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from hybrid_se.benchmark import (
    ComparisonReport,
    EstimatorSummary,
    StressRow,
    TrialReport,
    monte_carlo,
    perf_indices,
    stress_sweep,
)
from hybrid_se.errors import DegenerateIndexError
from hybrid_se.estimators import EstimatorType, run_cec
from hybrid_se.fixtures import fixture_1888, fixture_118, placement_instance, small_grid
from hybrid_se.power_flow import solve_power_flow
from hybrid_se.result_io import (
    COMPARISON_COLUMNS,
    read_csv,
    write_comparison_csv,
    write_convergence_csv,
    write_estimation_result,
    write_stress_csv,
)
from hybrid_se.simulation import NoiseSpec, simulate_measurements


@pytest.fixture(scope="module")
def grid():
    net = small_grid()
    return net, placement_instance(net, "C", seed=1)


@pytest.fixture(scope="module")
def net118():
    return fixture_118()


class TestPerformanceIndices:
    """Tests for ξ_z and σ_x²."""

    @pytest.fixture
    def values(self):
        z_true = np.array([1.0 + 0.1j, 0.5 - 0.2j, 0.9])
        z_meas = z_true + np.array([0.01, -0.02j, 0.005 + 0.005j])
        x_true = np.array([1.0, 0.98 - 0.03j])
        return z_meas, z_true, x_true

    def test_estimate_equals_truth(self, values):
        z_meas, z_true, x_true = values
        report = perf_indices(z_meas, z_true, z_true, x_true, x_true)
        assert report.xi_z == 0.0
        assert report.sigma_x2 == 0.0

    def test_estimate_equals_measurement(self, values):
        z_meas, z_true, x_true = values
        assert perf_indices(z_meas, z_meas, z_true, x_true, x_true).xi_z == pytest.approx(1.0)

    def test_state_error(self, values):
        z_meas, z_true, x_true = values
        x_est = x_true + np.array([0.01j, -0.02])
        report = perf_indices(z_meas, z_true, z_true, x_est, x_true)
        assert report.sigma_x2 == pytest.approx(0.01 ** 2 + 0.02 ** 2)

    def test_noise_free_is_degenerate(self, values):
        _, z_true, x_true = values
        with pytest.raises(DegenerateIndexError):
            perf_indices(z_true, z_true, z_true, x_true, x_true)

    def test_length_mismatch(self, values):
        z_meas, z_true, x_true = values
        with pytest.raises(ValueError):
            perf_indices(z_meas[:2], z_true, z_true, x_true, x_true)

    def test_negative_index_rejected(self):
        with pytest.raises(ValueError):
            TrialReport(xi_z=-1.0, sigma_x2=0.0)


class TestComparisonReport:
    """Tests for PIF / SUF ratios."""

    def test_ratios(self):
        report = ComparisonReport(
            name="x",
            trials=1,
            summaries={
                "CEC": EstimatorSummary("CEC", xi_z=0.04, sigma_x2=1e-4, time_ms=2.0),
                "CNE": EstimatorSummary("CNE", xi_z=0.05, sigma_x2=2e-4, time_ms=3.0),
                "REC": EstimatorSummary("REC", xi_z=0.06, sigma_x2=3e-4, time_ms=9.0),
            },
        )
        assert report.pif_cne_xi == pytest.approx(1.25)
        assert report.pif_rec_xi == pytest.approx(1.5)
        assert report.pif_cne_sigma == pytest.approx(2.0)
        assert report.pif_rec_sigma == pytest.approx(3.0)
        assert report.suf == pytest.approx(1.5)

    def test_missing_baseline(self):
        report = ComparisonReport(name="x", trials=1, summaries={"CNE": EstimatorSummary("CNE", xi_z=1.0)})
        assert report.pif_cne_xi is None
        assert report.suf is None


class TestMonteCarlo:
    """Tests for the Monte-Carlo harness."""

    def test_summaries(self, grid):
        net, placement = grid
        report = monte_carlo(net, placement, trials=3, noise=NoiseSpec(seed=5))
        assert set(report.summaries) == {"CEC", "CNE", "REC"}
        assert report.trials == 3
        for summary in report.summaries.values():
            assert summary.trials + summary.failures == 3
        cec = report.summaries["CEC"]
        assert cec.failures == 0
        assert cec.xi_z is not None and cec.xi_z > 0
        assert cec.sigma_x2 > 0
        assert cec.matrix_size == 2 * net.n_nodes + 2 * len(net.zero_injection_ids) + 1
        assert len(report.reports) == sum(s.trials for s in report.summaries.values())

    def test_deterministic(self, grid):
        net, placement = grid
        first = monte_carlo(net, placement, trials=2, noise=NoiseSpec(seed=8))
        second = monte_carlo(net, placement, trials=2, noise=NoiseSpec(seed=8))
        for name in first.summaries:
            assert first.summaries[name].xi_z == second.summaries[name].xi_z
            assert first.summaries[name].sigma_x2 == second.summaries[name].sigma_x2

    def test_workers_do_not_change_results(self, grid):
        net, placement = grid
        serial = monte_carlo(net, placement, trials=4, noise=NoiseSpec(seed=3))
        threaded = monte_carlo(net, placement, trials=4, noise=NoiseSpec(seed=3), workers=2)
        for name in serial.summaries:
            assert serial.summaries[name].xi_z == threaded.summaries[name].xi_z

    def test_noise_free_single_trial(self, grid):
        net, placement = grid
        report = monte_carlo(
            net, placement, estimators=(EstimatorType.CEC, EstimatorType.CNE),
            trials=1, noise=NoiseSpec.noiseless(),
        )
        assert report.summaries["CEC"].xi_z is None
        assert report.pif_cne_xi is None
        assert report.summaries["CEC"].sigma_x2 < 1e-12

    def test_invalid_trials(self, grid):
        net, placement = grid
        with pytest.raises(ValueError):
            monte_carlo(net, placement, trials=0)

    def test_report_json(self, grid):
        net, placement = grid
        report = monte_carlo(net, placement, trials=1, noise=NoiseSpec(seed=2))
        data = json.loads(json.dumps(report.to_dict(include_trials=True)))
        assert data["name"] == placement.name
        assert len(data["reports"]) == len(report.reports)

    def test_constrained_estimate_filters_noise(self, net118):
        report = monte_carlo(net118, placement_instance(net118, "C"), estimators=(EstimatorType.CEC,),
                             trials=3, noise=NoiseSpec(seed=4))
        cec = report.summaries["CEC"]
        assert cec.failures == 0
        assert cec.xi_z < 1.0

    @pytest.mark.slow
    @pytest.mark.parametrize("instance", ["A", "B", "C"])
    def test_constrained_estimator_most_efficient(self, net118, instance):
        report = monte_carlo(net118, placement_instance(net118, instance), trials=200,
                             noise=NoiseSpec(seed=0))
        assert report.summaries["CEC"].failures == 0
        assert report.pif_cne_xi >= 1.0
        assert report.pif_cne_sigma >= 1.0
        assert report.pif_rec_xi >= 1.0
        assert report.pif_rec_sigma >= 1.0


class TestStressSweep:
    """Tests for the load stress sweep."""

    def test_min_voltage_decreases(self, grid):
        net, placement = grid
        rows = stress_sweep(net, placement, [1.0, 1.05, 1.1], noise=NoiseSpec(seed=1))
        assert all(row.feasible for row in rows)
        voltages = [row.min_voltage for row in rows]
        assert voltages == sorted(voltages, reverse=True)
        for row in rows:
            assert set(row.iterations) == {"CEC", "REC"}
            assert all(row.converged.values())
            assert len(row.step_norms["CEC"]) == row.iterations["CEC"]

    def test_infeasible_multiplier(self, grid):
        net, placement = grid
        rows = stress_sweep(net, placement, [1.0, 500.0], noise=NoiseSpec(seed=1))
        assert rows[0].feasible
        assert not rows[1].feasible
        assert rows[1].message

    @pytest.mark.slow
    def test_near_stability_edge(self, net118):
        multipliers = [1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0, 16.0, 24.0, 32.0]
        rows = stress_sweep(net118, placement_instance(net118, "C"), multipliers, noise=NoiseSpec(seed=1))
        feasible = [row for row in rows if row.feasible]
        assert len(feasible) >= 2
        edge = feasible[-1]
        assert edge.min_voltage < feasible[0].min_voltage
        assert edge.converged["CEC"]
        assert edge.iterations["CEC"] <= edge.iterations["REC"]
        tail = edge.step_norms["CEC"][2:]
        assert all(later < earlier for earlier, later in zip(tail, tail[1:]))

    @pytest.mark.slow
    def test_largest_fixture_feasible(self):
        net = fixture_1888()
        flow = solve_power_flow(net)
        assert flow.iterations > 0
        rows = stress_sweep(net, placement_instance(net, "A"), [1.0, 1.1], noise=NoiseSpec(seed=1))
        assert all(row.feasible for row in rows)
        assert all(row.converged["CEC"] for row in rows)

    def test_multiplier_below_one(self, grid):
        net, placement = grid
        with pytest.raises(ValueError):
            stress_sweep(net, placement, [0.9])


class TestResultWriters:
    """Tests for CSV and JSON output."""

    def test_comparison_csv(self, grid, tmp_path: Path):
        net, placement = grid
        report = monte_carlo(net, placement, trials=2, noise=NoiseSpec(seed=6))
        path = write_comparison_csv([report], tmp_path / "tables" / "cmp.csv")
        rows = read_csv(path)
        assert len(rows) == 1
        assert list(rows[0]) == COMPARISON_COLUMNS
        assert rows[0]["instance"] == placement.name
        assert float(rows[0]["pif_cne_xi"]) == pytest.approx(report.pif_cne_xi)
        assert int(rows[0]["size_cne"]) == 2 * net.n_nodes

    def test_empty_cells_for_missing_values(self, tmp_path: Path):
        report = ComparisonReport(name="x", trials=1, summaries={"CEC": EstimatorSummary("CEC")})
        rows = read_csv(write_comparison_csv([report], tmp_path / "cmp.csv"))
        assert rows[0]["xi_cne"] == ""
        assert rows[0]["suf"] == ""

    def test_stress_csv(self, tmp_path: Path):
        rows = [
            StressRow(1.0, True, "7", 0.95, {"CEC": 4, "REC": 5}, {"CEC": True, "REC": True},
                      {"CEC": [0.1, 1e-3, 1e-6, 1e-9], "REC": [0.1, 1e-2, 1e-4, 1e-7, 1e-9]}),
            StressRow(9.0, False, message="diverged"),
        ]
        table = read_csv(write_stress_csv(rows, tmp_path / "stress.csv"))
        assert list(table[0]) == ["multiplier", "feasible", "min_voltage_node", "min_voltage",
                                  "iter_cec", "iter_rec"]
        assert table[0]["iter_rec"] == "5"
        assert table[1]["feasible"] == "False"
        assert table[1]["iter_cec"] == ""

        trace = read_csv(write_convergence_csv(rows[0], tmp_path / "trace.csv"))
        assert len(trace) == 5
        assert trace[4]["step_cec"] == ""
        assert float(trace[4]["step_rec"]) == pytest.approx(1e-9)

    def test_estimation_result_json(self, grid, tmp_path: Path):
        net, placement = grid
        state = solve_power_flow(net).state
        meas = simulate_measurements(state, net, placement, NoiseSpec(seed=1))
        result = run_cec(net, meas)
        data = json.loads(write_estimation_result(result, tmp_path / "r.json").read_text())
        assert data["estimator"] == "CEC"
        assert set(data["state"]) == set(net.node_ids)
