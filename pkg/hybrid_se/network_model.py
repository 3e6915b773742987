"""
Network Model Module.

Parses the JSON network file, validates its topology and builds the sparse
nodal admittance matrix shared by every measurement function.

All quantities are per-unit. Node identifiers are arbitrary strings mapped
to dense indices 0..n-1 in file order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Optional, Union

import networkx as nx
import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

from .errors import (
    DisconnectedNetworkError,
    DuplicateNodeError,
    MissingSlackError,
    MultipleSlackError,
    SchemaError,
    SlackZeroInjectionError,
    UnknownNodeError,
    ZeroAdmittanceError,
)


@dataclass(frozen=True)
class Node:
    """A network node with its shunt admittance and specified load/generation."""

    id: str
    shunt: complex = 0j
    is_zero_injection: bool = False
    p_load: float = 0.0
    q_load: float = 0.0
    p_gen: float = 0.0
    q_gen: float = 0.0

    @property
    def injection(self) -> complex:
        """Specified complex power injection (generation minus load)."""
        return complex(self.p_gen - self.p_load, self.q_gen - self.q_load)

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "id": self.id,
            "g_sh": self.shunt.real,
            "b_sh": self.shunt.imag,
            "zero_injection": self.is_zero_injection,
        }
        for name in ("p_load", "q_load", "p_gen", "q_gen"):
            value = getattr(self, name)
            if value:
                data[name] = value
        return data


@dataclass(frozen=True)
class Branch:
    """A pi-model branch between two nodes."""

    from_id: str
    to_id: str
    series: complex
    shunt_from: complex = 0j
    shunt_to: complex = 0j

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "from": self.from_id,
            "to": self.to_id,
            "g": self.series.real,
            "b": self.series.imag,
            "b_sh_from": self.shunt_from.imag,
            "b_sh_to": self.shunt_to.imag,
        }
        if self.shunt_from.real:
            data["g_sh_from"] = self.shunt_from.real
        if self.shunt_to.real:
            data["g_sh_to"] = self.shunt_to.real
        return data


@dataclass(frozen=True)
class Network:
    """
    Validated electrical network.

    Immutable after construction; `index` maps node ids to dense indices in
    file order.
    """

    nodes: tuple[Node, ...]
    branches: tuple[Branch, ...]
    slack: str
    v_slack: complex = 1.0 + 0j
    name: str = ""

    @cached_property
    def index(self) -> dict[str, int]:
        return {node.id: i for i, node in enumerate(self.nodes)}

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    @property
    def slack_index(self) -> int:
        return self.index[self.slack]

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(node.id for node in self.nodes)

    @property
    def zero_injection_ids(self) -> list[str]:
        return [node.id for node in self.nodes if node.is_zero_injection]

    def injections(self) -> np.ndarray:
        """Specified complex injections per node, in index order."""
        return np.array([node.injection for node in self.nodes], dtype=np.complex128)

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "slack": self.slack,
            "nodes": [node.to_dict() for node in self.nodes],
            "branches": [branch.to_dict() for branch in self.branches],
        }
        if self.v_slack != 1.0:
            data["v_slack"] = [self.v_slack.real, self.v_slack.imag]
        if self.name:
            data["name"] = self.name
        return data

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


@dataclass(frozen=True)
class AdmittanceMatrix:
    """
    Sparse nodal admittance matrix plus the branch arrays needed to evaluate
    branch currents and flows.
    """

    ybus: csr_matrix
    node_ids: tuple[str, ...]
    from_idx: np.ndarray
    to_idx: np.ndarray
    y_series: np.ndarray
    y_sh_from: np.ndarray
    y_sh_to: np.ndarray

    @property
    def n(self) -> int:
        return self.ybus.shape[0]

    @property
    def nnz(self) -> int:
        return self.ybus.nnz

    @cached_property
    def node_index(self) -> dict[str, int]:
        return {node_id: i for i, node_id in enumerate(self.node_ids)}

    @cached_property
    def branch_lookup(self) -> dict[tuple[int, int], tuple[int, int]]:
        """Map (measured node, far node) to (branch index, end) with end 0=from, 1=to."""
        lookup: dict[tuple[int, int], tuple[int, int]] = {}
        for b, (f, t) in enumerate(zip(self.from_idx.tolist(), self.to_idx.tolist())):
            lookup.setdefault((f, t), (b, 0))
            lookup.setdefault((t, f), (b, 1))
        return lookup

    def branch_currents(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Currents leaving each branch at its from end and at its to end."""
        uf = u[self.from_idx]
        ut = u[self.to_idx]
        i_from = self.y_series * (uf - ut) + self.y_sh_from * uf
        i_to = self.y_series * (ut - uf) + self.y_sh_to * ut
        return i_from, i_to


@dataclass
class StateVector:
    """Per-unit complex node voltages indexed like the network nodes."""

    u: np.ndarray
    node_ids: tuple[str, ...] = field(default_factory=tuple)

    @classmethod
    def flat(cls, net: Network) -> StateVector:
        return cls(np.ones(net.n_nodes, dtype=np.complex128), net.node_ids)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.u)))

    def within_bound(self, bound: float = 2.0) -> bool:
        mags = np.abs(self.u)
        return bool(np.all((mags > 0.0) & (mags < bound)))

    def to_dict(self) -> dict[str, Any]:
        return {
            node_id: {"re": float(value.real), "im": float(value.imag)}
            for node_id, value in zip(self.node_ids, self.u)
        }


def _as_float(record: dict[str, Any], key: str, where: str) -> float:
    value = record.get(key, 0.0)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{where}: field '{key}' must be a number, got {value!r}")
    return float(value)


def _node_from_record(record: Any, position: int) -> tuple[Node, bool]:
    if not isinstance(record, dict) or "id" not in record:
        raise SchemaError(f"nodes[{position}]: expected an object with an 'id' field")
    where = f"node {record['id']!r}"
    node = Node(
        id=str(record["id"]),
        shunt=complex(_as_float(record, "g_sh", where), _as_float(record, "b_sh", where)),
        is_zero_injection=bool(record.get("zero_injection", False)),
        p_load=_as_float(record, "p_load", where),
        q_load=_as_float(record, "q_load", where),
        p_gen=_as_float(record, "p_gen", where),
        q_gen=_as_float(record, "q_gen", where),
    )
    return node, bool(record.get("slack", False))


def _branch_from_record(record: Any, position: int) -> Branch:
    if not isinstance(record, dict) or "from" not in record or "to" not in record:
        raise SchemaError(f"branches[{position}]: expected an object with 'from' and 'to'")
    where = f"branch {position} ({record['from']}-{record['to']})"
    if "g" not in record or "b" not in record:
        raise SchemaError(f"{where}: series admittance needs both 'g' and 'b'")
    return Branch(
        from_id=str(record["from"]),
        to_id=str(record["to"]),
        series=complex(_as_float(record, "g", where), _as_float(record, "b", where)),
        shunt_from=complex(_as_float(record, "g_sh_from", where), _as_float(record, "b_sh_from", where)),
        shunt_to=complex(_as_float(record, "g_sh_to", where), _as_float(record, "b_sh_to", where)),
    )


def network_from_dict(data: Any) -> Network:
    """
    Build and validate a Network from the decoded JSON object.

    Raises:
        SchemaError, DuplicateNodeError, UnknownNodeError, MissingSlackError,
        MultipleSlackError, SlackZeroInjectionError, DisconnectedNetworkError,
        ZeroAdmittanceError.
    """
    if not isinstance(data, dict):
        raise SchemaError("network file must contain a JSON object")
    if not isinstance(data.get("nodes"), list) or not data["nodes"]:
        raise SchemaError("'nodes' must be a non-empty list")
    if not isinstance(data.get("branches", []), list):
        raise SchemaError("'branches' must be a list")

    nodes: list[Node] = []
    slack_ids: list[str] = []
    seen: set[str] = set()
    for position, record in enumerate(data["nodes"]):
        node, marked_slack = _node_from_record(record, position)
        if node.id in seen:
            raise DuplicateNodeError(f"duplicate node id {node.id!r}")
        seen.add(node.id)
        nodes.append(node)
        if marked_slack:
            slack_ids.append(node.id)

    top_slack = data.get("slack")
    if isinstance(top_slack, list):
        slack_ids.extend(str(s) for s in top_slack)
    elif top_slack is not None:
        slack_ids.append(str(top_slack))
    slack_ids = list(dict.fromkeys(slack_ids))
    if not slack_ids:
        raise MissingSlackError("missing slack node")
    if len(slack_ids) > 1:
        raise MultipleSlackError(f"multiple slack nodes: {', '.join(slack_ids)}")
    slack = slack_ids[0]
    if slack not in seen:
        raise UnknownNodeError(f"slack node {slack!r} is not a node")

    branches = [_branch_from_record(rec, pos) for pos, rec in enumerate(data.get("branches", []))]

    v_slack = data.get("v_slack", [1.0, 0.0])
    if not (isinstance(v_slack, list) and len(v_slack) == 2):
        raise SchemaError("'v_slack' must be a [re, im] pair")

    net = Network(
        nodes=tuple(nodes),
        branches=tuple(branches),
        slack=slack,
        v_slack=complex(float(v_slack[0]), float(v_slack[1])),
        name=str(data.get("name", "")),
    )
    validate_network(net)
    return net


def validate_network(net: Network) -> None:
    """Check the Network invariants; raises a distinct NetworkError per violation."""
    index = net.index
    if len(index) != net.n_nodes:
        raise DuplicateNodeError("duplicate node ids")
    if net.slack not in index:
        raise UnknownNodeError(f"slack node {net.slack!r} is not a node")
    if net.nodes[index[net.slack]].is_zero_injection:
        raise SlackZeroInjectionError(f"slack node {net.slack!r} is flagged zero-injection")

    graph = nx.Graph()
    graph.add_nodes_from(index)
    for position, branch in enumerate(net.branches):
        for end in (branch.from_id, branch.to_id):
            if end not in index:
                raise UnknownNodeError(f"branch {position} refers to unknown node {end!r}")
        if branch.from_id == branch.to_id:
            raise SchemaError(f"branch {position} connects node {branch.from_id!r} to itself")
        if branch.series == 0:
            raise ZeroAdmittanceError(
                f"branch {position} ({branch.from_id}-{branch.to_id}) has zero series admittance"
            )
        graph.add_edge(branch.from_id, branch.to_id)

    islands = nx.number_connected_components(graph)
    if islands != 1:
        raise DisconnectedNetworkError(f"network is disconnected ({islands} islands)", islands)


def parse_network(text: str) -> Network:
    """
    Parse network file content.

    Args:
        text: JSON text following the network schema.

    Returns:
        Validated Network.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"network file is not valid JSON: {e}") from e
    return network_from_dict(data)


def load_network(path: Union[str, Path]) -> Network:
    """Read and parse a network file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Network file not found: {path}")
    net = parse_network(path.read_text(encoding="utf-8"))
    if not net.name:
        net = replace(net, name=path.stem)
    return net


def build_admittance(net: Network) -> AdmittanceMatrix:
    """
    Build the nodal admittance matrix.

    Y_ii = y_i^sh + sum_k (y_ik + branch shunt at i), Y_ik = -y_ik for k != i.
    """
    n = net.n_nodes
    index = net.index
    from_idx = np.array([index[b.from_id] for b in net.branches], dtype=np.int64)
    to_idx = np.array([index[b.to_id] for b in net.branches], dtype=np.int64)
    y_series = np.array([b.series for b in net.branches], dtype=np.complex128)
    y_sh_from = np.array([b.shunt_from for b in net.branches], dtype=np.complex128)
    y_sh_to = np.array([b.shunt_to for b in net.branches], dtype=np.complex128)

    diag = np.array([node.shunt for node in net.nodes], dtype=np.complex128)
    np.add.at(diag, from_idx, y_series + y_sh_from)
    np.add.at(diag, to_idx, y_series + y_sh_to)

    nodes = np.arange(n)
    rows = np.concatenate([nodes, from_idx, to_idx])
    cols = np.concatenate([nodes, to_idx, from_idx])
    vals = np.concatenate([diag, -y_series, -y_series])
    ybus = coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    ybus.sum_duplicates()
    ybus.sort_indices()

    return AdmittanceMatrix(
        ybus=ybus,
        node_ids=net.node_ids,
        from_idx=from_idx,
        to_idx=to_idx,
        y_series=y_series,
        y_sh_from=y_sh_from,
        y_sh_to=y_sh_to,
    )


def scale_loads(net: Network, multiplier: float) -> Network:
    """Return a copy of the network with every node load scaled by `multiplier`."""
    nodes = tuple(
        replace(node, p_load=node.p_load * multiplier, q_load=node.q_load * multiplier)
        for node in net.nodes
    )
    return replace(net, nodes=nodes)


def relabel_nodes(net: Network, order: Optional[list[int]] = None) -> Network:
    """Return the same network with its node list reordered (file order = `order`)."""
    order = order if order is not None else list(range(net.n_nodes))
    return replace(net, nodes=tuple(net.nodes[i] for i in order))
