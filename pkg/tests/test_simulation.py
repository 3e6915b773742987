"""
Power Flow and Measurement Simulation Tests.

Tests:
- Newton power flow on the synthetic fixtures
- Meter placements (instances A-D, file round trip, validation)
- Noise model: exactness at zero noise, determinism, noise levels
- Measurement weights: inverse noise variance and fixed class weights
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from hybrid_se.errors import PlacementError, PowerFlowDivergedError
from hybrid_se.fixtures import (
    describe,
    fixture_118,
    fixture_placement,
    nearest_generator,
    placement_instance,
    small_grid,
    synthetic_grid,
)
from hybrid_se.measurement_model import MeasurementKind, MeasurementSet, eval_h
from hybrid_se.network_model import build_admittance, scale_loads
from hybrid_se.power_flow import PowerFlowConfig, solve_power_flow
from hybrid_se.simulation import (
    NoiseSpec,
    Placement,
    load_placement,
    parse_placement,
    simulate_measurements,
)

K = MeasurementKind


@pytest.fixture(scope="module")
def net118():
    return fixture_118()


@pytest.fixture(scope="module")
def flow118(net118):
    return solve_power_flow(net118)


class TestFixtures:
    """Tests for the synthetic networks."""

    def test_118_counts(self, net118):
        assert describe(net118) == {"nodes": 118, "branches": 186, "zero_injection": 10}

    def test_admittance_pattern(self, net118):
        assert build_admittance(net118).nnz == 118 + 2 * 186

    def test_deterministic(self):
        a = synthetic_grid(30, 40, 3, seed=7)
        b = synthetic_grid(30, 40, 3, seed=7)
        assert a == b

    def test_too_few_branches(self):
        with pytest.raises(ValueError):
            synthetic_grid(10, 5, 0)

    def test_nearest_generator_by_impedance(self):
        # path 0-1-2-3 with a cheap far edge: node 2 is electrically closer to 3
        pairs = [(0, 1), (1, 2), (2, 3)]
        served = nearest_generator(4, pairs, [1.0, 1.0, 0.1], {0, 3})
        assert served == {0: 0, 1: 0, 2: 3, 3: 3}

    def test_nearest_generator_without_generators(self):
        assert nearest_generator(3, [(0, 1), (1, 2)], [1.0, 1.0], set()) == {}

    def test_slack_not_zero_injection(self, net118):
        assert net118.slack not in net118.zero_injection_ids

    @pytest.mark.slow
    def test_1888_counts(self):
        from hybrid_se.fixtures import fixture_1888
        assert describe(fixture_1888()) == {"nodes": 1888, "branches": 2531, "zero_injection": 680}


class TestPowerFlow:
    """Tests for the Newton power flow."""

    def test_converges(self, net118, flow118):
        assert flow118.iterations <= 10
        assert flow118.mismatch_norms[-1] < 1e-10
        assert flow118.state.u[net118.slack_index] == net118.v_slack

    def test_injections_match_specification(self, net118, flow118):
        Y = build_admittance(net118)
        u = flow118.state.u
        injection = u * np.conj(Y.ybus @ u)
        spec = net118.injections()
        others = [i for i in range(net118.n_nodes) if i != net118.slack_index]
        np.testing.assert_allclose(injection[others], spec[others], atol=1e-9)

    def test_zero_injection_nodes_inject_nothing(self, net118, flow118):
        Y = build_admittance(net118)
        u = flow118.state.u
        zi = [net118.index[n] for n in net118.zero_injection_ids]
        np.testing.assert_allclose(u[zi] * np.conj((Y.ybus @ u)[zi]), 0, atol=1e-9)

    def test_voltages_reasonable(self, flow118):
        _, v_min = flow118.min_voltage()
        assert 0.8 < v_min <= 1.1

    def test_heavier_load_lowers_voltage(self, net118, flow118):
        heavier = solve_power_flow(scale_loads(net118, 1.1), initial=flow118.state.u)
        assert heavier.min_voltage()[1] < flow118.min_voltage()[1]

    def test_divergence(self, net118):
        with pytest.raises(PowerFlowDivergedError):
            solve_power_flow(scale_loads(net118, 50.0), PowerFlowConfig(max_iterations=15))


class TestPlacement:
    """Tests for meter placements."""

    def test_instance_counts(self, net118):
        a = placement_instance(net118, "A")
        assert len(a.scada_flow) == 2 * 186
        assert len(a.pmu_voltage) == 4
        assert len(a.pmu_current) == 3
        assert a.pmu_voltage[0] == net118.slack

        b = placement_instance(net118, "B")
        assert len(b.pmu_voltage) == 3
        assert len(b.pmu_current) == 35

        c = placement_instance(net118, "C")
        assert len(c.pmu_current) == 186

        d = placement_instance(net118, "D")
        assert d.is_pmu_only
        assert len(d.pmu_voltage) == 118

    def test_unknown_instance(self, net118):
        with pytest.raises(ValueError):
            placement_instance(net118, "E")

    def test_fixture_placement(self):
        net, placement = fixture_placement("118_B")
        assert net.n_nodes == 118
        assert placement.name == "118_B"

    def test_file_round_trip(self, net118, tmp_path: Path):
        placement = placement_instance(net118, "B", seed=3)
        path = tmp_path / "b.json"
        path.write_text(placement.to_json(), encoding="utf-8")
        loaded = load_placement(path)
        assert loaded.pmu_current == placement.pmu_current
        assert loaded.scada_flow == placement.scada_flow

    def test_name_from_file_stem(self, tmp_path: Path):
        path = tmp_path / "meters.json"
        path.write_text(json.dumps({"pmu_voltage": ["1"]}), encoding="utf-8")
        assert load_placement(path).name == "meters"

    def test_bad_pairs(self):
        with pytest.raises(PlacementError):
            parse_placement(json.dumps({"pmu_current": [["1", "2", "3"]]}))

    def test_invalid_json(self):
        with pytest.raises(PlacementError):
            parse_placement("[")

    def test_validate_unknown_node(self, net118):
        with pytest.raises(PlacementError):
            Placement(pmu_voltage=["nowhere"]).validate(net118)

    def test_validate_missing_branch(self):
        net = small_grid()
        pairs = {(b.from_id, b.to_id) for b in net.branches}
        pairs |= {(t, f) for f, t in pairs}
        missing = next(
            (a, b) for a in net.node_ids for b in net.node_ids if a != b and (a, b) not in pairs
        )
        with pytest.raises(PlacementError):
            Placement(pmu_current=[missing]).validate(net)

    def test_empty(self, net118):
        with pytest.raises(PlacementError):
            Placement().validate(net118)


class TestSimulation:
    """Tests for the noise model."""

    def test_zero_noise_is_exact(self, net118, flow118):
        placement = placement_instance(net118, "A")
        meas = simulate_measurements(flow118.state, net118, placement, NoiseSpec.noiseless())
        Y = build_admittance(net118)
        real = [m for m in meas if m.kind is not K.ZERO_INJECTION_PSEUDO]
        mset = MeasurementSet.build(real, Y)
        np.testing.assert_allclose(mset.z, eval_h(flow118.state.u, mset, Y), rtol=1e-14, atol=1e-15)

    def test_zero_injection_rows(self, net118, flow118):
        placement = placement_instance(net118, "A")
        meas = simulate_measurements(flow118.state, net118, placement, NoiseSpec(seed=4))
        pseudo = [m for m in meas if m.kind is K.ZERO_INJECTION_PSEUDO]
        assert [m.node for m in pseudo] == net118.zero_injection_ids
        assert all(m.value == 0 for m in pseudo)
        assert all(m.weight == 25.0 for m in pseudo)

        without = simulate_measurements(flow118.state, net118, placement, NoiseSpec(seed=4),
                                        include_zero_injection=False)
        assert len(without) == len(meas) - len(pseudo)

    def test_same_seed_identical(self, net118, flow118):
        placement = placement_instance(net118, "B")
        first = simulate_measurements(flow118.state, net118, placement, NoiseSpec(seed=9))
        second = simulate_measurements(flow118.state, net118, placement, NoiseSpec(seed=9))
        assert first == second

    def test_different_seed_differs(self, net118, flow118):
        placement = placement_instance(net118, "B")
        first = simulate_measurements(flow118.state, net118, placement, NoiseSpec(seed=9))
        second = simulate_measurements(flow118.state, net118, placement, NoiseSpec(seed=10))
        assert first != second

    def test_inverse_variance_weights(self, net118, flow118):
        placement = placement_instance(net118, "A")
        meas = simulate_measurements(flow118.state, net118, placement, NoiseSpec(seed=1))
        angle_sigma = np.deg2rad(NoiseSpec().pmu_angle_sigma_deg)
        index = net118.index
        for m in meas:
            if m.kind is K.SCADA_POWER_FLOW:
                assert m.weight == pytest.approx(1.0 / m.sigma ** 2)
            elif m.kind is K.PMU_VOLTAGE:
                mag = abs(flow118.state.u[index[m.node]])
                assert m.weight == pytest.approx(1.0 / (0.5 * (m.sigma ** 2 + (mag * angle_sigma) ** 2)))
            elif m.kind is K.ZERO_INJECTION_PSEUDO:
                assert m.weight == 25.0
        pmu = min(m.weight for m in meas if m.kind.is_pmu)
        scada = max(m.weight for m in meas if m.kind is K.SCADA_POWER_FLOW)
        assert pmu > scada

    def test_class_weights(self, net118, flow118):
        placement = placement_instance(net118, "A")
        meas = simulate_measurements(flow118.state, net118, placement,
                                     NoiseSpec(seed=1, weighting="class"))
        for m in meas:
            if m.kind.is_pmu:
                assert m.weight == 5.0
            elif m.kind is not K.ZERO_INJECTION_PSEUDO:
                assert m.weight == 1.0

    def test_noiseless_rows_keep_class_weights(self, net118, flow118):
        placement = placement_instance(net118, "B")
        meas = simulate_measurements(flow118.state, net118, placement, NoiseSpec.noiseless())
        assert {m.weight for m in meas if m.kind.is_pmu} == {5.0}
        assert {m.weight for m in meas if m.kind is K.SCADA_POWER_FLOW} == {1.0}

    def test_unknown_weighting(self):
        with pytest.raises(ValueError, match="weighting"):
            NoiseSpec(weighting="uniform")

    def test_scada_voltage_noise_level(self, net118, flow118):
        node = net118.node_ids[5]
        placement = Placement(scada_voltage=[node] * 20000)
        noise = NoiseSpec(seed=11, scada_sigma_pct=2.0, voltage_full_scale=1.0)
        meas = simulate_measurements(flow118.state, net118, placement, noise,
                                     include_zero_injection=False)
        mags = np.sqrt([m.value.real for m in meas])
        true_mag = abs(flow118.state.u[5])
        assert np.mean(mags) == pytest.approx(true_mag, abs=1e-3)
        assert np.std(mags) == pytest.approx(0.02, rel=0.05)
        assert all(m.sigma == pytest.approx(0.02) for m in meas)

    def test_pmu_angle_noise_level(self, net118, flow118):
        node = net118.node_ids[7]
        placement = Placement(pmu_voltage=[node] * 20000)
        noise = NoiseSpec(seed=12, pmu_mag_sigma_pct=0.0, pmu_angle_sigma_deg=0.5)
        meas = simulate_measurements(flow118.state, net118, placement, noise,
                                     include_zero_injection=False)
        values = np.array([m.value for m in meas])
        true_value = flow118.state.u[7]
        np.testing.assert_allclose(np.abs(values), abs(true_value), rtol=1e-12)
        angles = np.angle(values / true_value)
        assert np.std(np.rad2deg(angles)) == pytest.approx(0.5, rel=0.05)

    def test_full_scale_override(self, net118, flow118):
        placement = Placement(scada_flow=[(net118.branches[0].from_id, net118.branches[0].to_id)])
        noise = NoiseSpec(seed=1, full_scale={"ScadaPowerFlow": 2.0})
        meas = simulate_measurements(flow118.state, net118, placement, noise,
                                     include_zero_injection=False)
        assert meas[0].sigma == pytest.approx(0.04)

    def test_invalid_noise(self):
        with pytest.raises(ValueError):
            NoiseSpec(scada_sigma_pct=-1.0)
