"""
Network Model Tests.

Tests:
- Parse and validate network files
- Distinct errors for every malformed-network case
- Admittance matrix construction
- Branch current evaluation
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from hybrid_se.errors import (
    DisconnectedNetworkError,
    DuplicateNodeError,
    MissingSlackError,
    MultipleSlackError,
    NetworkError,
    SchemaError,
    SlackZeroInjectionError,
    UnknownNodeError,
    ZeroAdmittanceError,
)
from hybrid_se.network_model import (
    StateVector,
    build_admittance,
    load_network,
    network_from_dict,
    parse_network,
    relabel_nodes,
    scale_loads,
)


def three_node_dict() -> dict:
    return {
        "slack": "a",
        "nodes": [
            {"id": "a"},
            {"id": "b", "b_sh": 0.02, "p_load": 0.5, "q_load": 0.1},
            {"id": "c", "zero_injection": True},
        ],
        "branches": [
            {"from": "a", "to": "b", "g": 1.0, "b": -10.0, "b_sh_from": 0.01, "b_sh_to": 0.01},
            {"from": "b", "to": "c", "g": 2.0, "b": -8.0},
            {"from": "a", "to": "c", "g": 0.5, "b": -5.0},
        ],
    }


class TestNetworkParsing:
    """Tests for network file parsing and validation."""

    def test_parse_valid_network(self):
        net = parse_network(json.dumps(three_node_dict()))

        assert net.n_nodes == 3
        assert net.n_branches == 3
        assert net.slack == "a"
        assert net.slack_index == 0
        assert net.zero_injection_ids == ["c"]
        assert net.index == {"a": 0, "b": 1, "c": 2}

    def test_slack_flag_on_node(self):
        data = three_node_dict()
        del data["slack"]
        data["nodes"][1]["slack"] = True
        net = network_from_dict(data)
        assert net.slack == "b"

    def test_injections(self):
        net = network_from_dict(three_node_dict())
        np.testing.assert_allclose(net.injections(), [0, -0.5 - 0.1j, 0])

    def test_load_network_uses_file_stem(self, tmp_path: Path):
        path = tmp_path / "mini.json"
        path.write_text(json.dumps(three_node_dict()), encoding="utf-8")
        assert load_network(path).name == "mini"

    def test_load_network_missing_file(self, tmp_path: Path):
        with pytest.raises(FileNotFoundError):
            load_network(tmp_path / "absent.json")

    def test_to_dict_reparses(self):
        net = network_from_dict(three_node_dict())
        again = network_from_dict(net.to_dict())
        assert again.node_ids == net.node_ids
        assert again.branches == net.branches
        assert again.zero_injection_ids == net.zero_injection_ids

    def test_invalid_json(self):
        with pytest.raises(SchemaError):
            parse_network("{not json")

    def test_duplicate_node(self):
        data = three_node_dict()
        data["nodes"].append({"id": "b"})
        with pytest.raises(DuplicateNodeError):
            network_from_dict(data)

    def test_missing_slack(self):
        data = three_node_dict()
        del data["slack"]
        with pytest.raises(MissingSlackError):
            network_from_dict(data)

    def test_multiple_slack(self):
        data = three_node_dict()
        data["nodes"][1]["slack"] = True
        with pytest.raises(MultipleSlackError):
            network_from_dict(data)

    def test_unknown_branch_node(self):
        data = three_node_dict()
        data["branches"].append({"from": "a", "to": "z", "g": 1.0, "b": -1.0})
        with pytest.raises(UnknownNodeError):
            network_from_dict(data)

    def test_slack_zero_injection(self):
        data = three_node_dict()
        data["nodes"][0]["zero_injection"] = True
        with pytest.raises(SlackZeroInjectionError):
            network_from_dict(data)

    def test_disconnected(self):
        data = three_node_dict()
        data["nodes"].append({"id": "d"})
        data["nodes"].append({"id": "e"})
        data["branches"].append({"from": "d", "to": "e", "g": 1.0, "b": -1.0})
        with pytest.raises(DisconnectedNetworkError) as exc:
            network_from_dict(data)
        assert exc.value.islands == 2

    def test_zero_series_admittance(self):
        data = three_node_dict()
        data["branches"][1]["g"] = 0.0
        data["branches"][1]["b"] = 0.0
        with pytest.raises(ZeroAdmittanceError):
            network_from_dict(data)

    def test_non_numeric_field(self):
        data = three_node_dict()
        data["branches"][0]["g"] = "one"
        with pytest.raises(SchemaError):
            network_from_dict(data)

    def test_all_errors_are_network_errors(self):
        data = three_node_dict()
        del data["slack"]
        with pytest.raises(NetworkError):
            network_from_dict(data)
        with pytest.raises(ValueError):
            network_from_dict(data)


class TestAdmittanceMatrix:
    """Tests for the nodal admittance matrix."""

    @pytest.fixture
    def net(self):
        return network_from_dict(three_node_dict())

    def test_diagonal_and_off_diagonal(self, net):
        Y = build_admittance(net).ybus.toarray()
        y_ab = 1.0 - 10.0j
        y_bc = 2.0 - 8.0j
        y_ac = 0.5 - 5.0j

        assert Y[0, 1] == pytest.approx(-y_ab)
        assert Y[1, 2] == pytest.approx(-y_bc)
        assert Y[0, 0] == pytest.approx(y_ab + 0.01j + y_ac)
        assert Y[1, 1] == pytest.approx(0.02j + y_ab + 0.01j + y_bc)
        assert Y[2, 2] == pytest.approx(y_bc + y_ac)

    def test_two_node_example(self):
        net = network_from_dict({
            "slack": "1",
            "nodes": [{"id": "1", "b_sh": 0.1}, {"id": "2"}],
            "branches": [{"from": "1", "to": "2", "g": 2.0, "b": -5.0}],
        })
        Y = build_admittance(net).ybus.toarray()
        assert Y[0, 0] == pytest.approx(2 - 4.9j)
        assert Y[0, 1] == pytest.approx(-2 + 5j)
        assert Y[1, 1] == pytest.approx(2 - 5j)

    def test_symmetric(self, net):
        Y = build_admittance(net).ybus.toarray()
        np.testing.assert_allclose(Y, Y.T)

    def test_nnz(self, net):
        Y = build_admittance(net)
        assert Y.n == 3
        assert Y.nnz == 9

    def test_row_sums_without_shunts_vanish(self):
        data = three_node_dict()
        data["nodes"][1].pop("b_sh")
        data["branches"][0].pop("b_sh_from")
        data["branches"][0].pop("b_sh_to")
        Y = build_admittance(network_from_dict(data)).ybus.toarray()
        np.testing.assert_allclose(Y.sum(axis=1), 0, atol=1e-14)

    def test_branch_lookup(self, net):
        Y = build_admittance(net)
        assert Y.branch_lookup[(0, 1)] == (0, 0)
        assert Y.branch_lookup[(1, 0)] == (0, 1)
        assert Y.branch_lookup[(2, 1)] == (1, 1)

    def test_branch_currents_match_injection(self, net):
        Y = build_admittance(net)
        u = np.array([1.0, 0.97 - 0.05j, 0.99 - 0.02j])
        i_from, i_to = Y.branch_currents(u)

        injected = np.zeros(3, dtype=complex)
        np.add.at(injected, Y.from_idx, i_from)
        np.add.at(injected, Y.to_idx, i_to)
        shunt = np.array([node.shunt for node in net.nodes])
        np.testing.assert_allclose(injected + shunt * u, Y.ybus @ u, atol=1e-12)


class TestNetworkHelpers:
    """Tests for load scaling, relabeling and the state vector."""

    def test_scale_loads(self):
        net = network_from_dict(three_node_dict())
        scaled = scale_loads(net, 1.5)
        assert scaled.nodes[1].p_load == pytest.approx(0.75)
        assert scaled.nodes[1].q_load == pytest.approx(0.15)
        assert net.nodes[1].p_load == 0.5

    def test_relabel_keeps_ybus_up_to_permutation(self):
        net = network_from_dict(three_node_dict())
        order = [2, 0, 1]
        moved = relabel_nodes(net, order)
        Y = build_admittance(net).ybus.toarray()
        Z = build_admittance(moved).ybus.toarray()
        np.testing.assert_allclose(Z, Y[np.ix_(order, order)])

    def test_state_vector(self):
        net = network_from_dict(three_node_dict())
        state = StateVector.flat(net)
        assert state.is_finite()
        assert state.within_bound()
        assert state.to_dict()["b"] == {"re": 1.0, "im": 0.0}

        state.u[1] = 3.0
        assert not state.within_bound(2.0)
