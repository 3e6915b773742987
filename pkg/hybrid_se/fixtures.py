"""
Synthetic Fixtures Module.

Deterministic meshed test networks with the node / branch / zero-injection
counts of the standard benchmark instances, and A–D meter placements.

Topology: node i (0-based) attaches to a random earlier node in
[i // 2, i), so electrical depth grows logarithmically; the first few nodes
hang directly off the slack. Extra branches close loops between nodes in the
same index band.

Generation: generators sit on every sixth node. Each load is served by the
electrically nearest generator, which also absorbs the charging and shunt
output of the nodes it serves, so the slack only carries losses at
multiplier 1. Per-node loads and shunts shrink with 118 / n on larger
networks so that total demand stays that of the 118-node system.
"""

from __future__ import annotations

from typing import Optional

import networkx as nx
import numpy as np

from .network_model import Branch, Network, Node, validate_network
from .simulation import Placement

SLACK_STAR = 6
GENERATOR_SPACING = 6
REFERENCE_NODES = 118


def nearest_generator(
    n_nodes: int,
    pairs: list[tuple[int, int]],
    impedance: list[float],
    generators: set[int],
) -> dict[int, int]:
    """Map every node reachable from a generator to its nearest one by path impedance."""
    if not generators:
        return {}
    graph = nx.Graph()
    graph.add_nodes_from(range(n_nodes))
    for (k, i), z in zip(pairs, impedance):
        graph.add_edge(k, i, weight=z)
    _, paths = nx.multi_source_dijkstra(graph, sorted(generators))
    return {node: path[0] for node, path in paths.items()}


def synthetic_grid(
    n_nodes: int,
    n_branches: int,
    n_zero_injection: int,
    seed: int = 0,
    name: str = "",
) -> Network:
    """
    Build a connected synthetic network.

    Args:
        n_nodes: Number of nodes (ids "1".."n", slack "1").
        n_branches: Number of branches, at least n_nodes - 1.
        n_zero_injection: Number of zero-injection nodes.
        seed: RNG seed.
        name: Network name.

    Raises:
        ValueError: counts cannot be met.
    """
    if n_nodes < 2:
        raise ValueError("need at least two nodes")
    if n_branches < n_nodes - 1:
        raise ValueError(f"{n_branches} branches cannot connect {n_nodes} nodes")
    rng = np.random.default_rng(seed)

    pairs: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for i in range(1, n_nodes):
        parent = 0 if i < SLACK_STAR else int(rng.integers(i // 2, i))
        pairs.append((parent, i))
        seen.add((parent, i))

    attempts = 0
    while len(pairs) < n_branches:
        attempts += 1
        if attempts > 200 * n_branches:
            raise ValueError(f"could not place {n_branches} distinct branches")
        i = int(rng.integers(2, n_nodes))
        k = int(rng.integers(i // 2, i))
        if (k, i) in seen:
            continue
        seen.add((k, i))
        pairs.append((k, i))

    branches = []
    impedance = []
    charging = np.zeros(n_nodes)
    for k, i in pairs:
        r = rng.uniform(0.005, 0.03)
        x = rng.uniform(0.03, 0.15)
        b_charging = rng.uniform(0.0, 0.02)
        branches.append(
            Branch(
                from_id=str(k + 1),
                to_id=str(i + 1),
                series=1.0 / complex(r, x),
                shunt_from=complex(0.0, b_charging / 2),
                shunt_to=complex(0.0, b_charging / 2),
            )
        )
        impedance.append(abs(complex(r, x)))
        charging[[k, i]] += b_charging / 2

    generators = {i for i in range(GENERATOR_SPACING // 2, n_nodes, GENERATOR_SPACING)}
    candidates = np.array([i for i in range(1, n_nodes) if i not in generators])
    if n_zero_injection > candidates.size:
        raise ValueError(f"only {candidates.size} nodes can be zero-injection")
    zero_injection = set(rng.choice(candidates, size=n_zero_injection, replace=False).tolist())

    scale = min(1.0, REFERENCE_NODES / n_nodes)
    p_load = np.zeros(n_nodes)
    q_load = np.zeros(n_nodes)
    shunt = np.zeros(n_nodes, dtype=np.complex128)
    for i in range(1, n_nodes):
        if i in zero_injection:
            continue
        p_load[i] = scale * rng.uniform(0.02, 0.1)
        q_load[i] = p_load[i] * rng.uniform(0.2, 0.4)
        if rng.random() < 0.1:
            shunt[i] = complex(0.0, scale * rng.uniform(0.0, 0.05))

    p_gen = np.zeros(n_nodes)
    q_gen = np.zeros(n_nodes)
    served_by = nearest_generator(n_nodes, pairs, impedance, generators)
    for i in range(1, n_nodes):
        g = served_by.get(i)
        if g is None:
            continue
        p_gen[g] += p_load[i]
        # reactive demand net of the node's own capacitive output at 1 pu
        q_gen[g] += q_load[i] - shunt[i].imag - charging[i]

    nodes = tuple(
        Node(
            id=str(i + 1),
            shunt=complex(shunt[i]),
            is_zero_injection=i in zero_injection,
            p_load=float(p_load[i]),
            q_load=float(q_load[i]),
            p_gen=float(p_gen[i]),
            q_gen=float(q_gen[i]),
        )
        for i in range(n_nodes)
    )
    net = Network(
        nodes=nodes,
        branches=tuple(branches),
        slack="1",
        v_slack=1.02 + 0j,
        name=name or f"synthetic_{n_nodes}",
    )
    validate_network(net)
    return net


def fixture_118(seed: int = 118) -> Network:
    """118 nodes, 186 branches, 10 zero injections."""
    return synthetic_grid(118, 186, 10, seed=seed, name="118")


def fixture_1888(seed: int = 1888) -> Network:
    """1888 nodes, 2531 branches, 680 zero injections."""
    return synthetic_grid(1888, 2531, 680, seed=seed, name="1888")


def small_grid(seed: int = 5) -> Network:
    """Five nodes, seven branches, one zero injection."""
    return synthetic_grid(5, 7, 1, seed=seed, name="5")


PLACEMENT_PMU = {
    # instance: (voltage PMUs, share of branches with a current PMU)
    "A": (4, None),
    "B": (3, 0.19),
    "C": (3, 1.0),
}


def placement_instance(net: Network, instance: str, seed: int = 0) -> Placement:
    """
    Meter placement in the pattern of the benchmark instances.

    A–C: SCADA P/Q flows at both ends of every branch plus growing current
    PMU coverage (A: 4 V / 3 I, B: 3 V / ~19 % I, C: 3 V / all branches).
    D: PMU voltage at every node and PMU current on every branch, no SCADA.
    """
    instance = instance.upper()
    rng = np.random.default_rng(seed)
    ids = list(net.node_ids)
    branch_ends = [(b.from_id, b.to_id) for b in net.branches]

    if instance == "D":
        return Placement(pmu_voltage=ids, pmu_current=branch_ends, name=f"{net.name}_D")
    if instance not in PLACEMENT_PMU:
        raise ValueError(f"Unknown placement instance: {instance}")

    scada_flow = branch_ends + [(t, f) for f, t in branch_ends]
    n_voltage, share = PLACEMENT_PMU[instance]
    voltage = [net.slack] + sorted(
        rng.choice([i for i in ids if i != net.slack], size=n_voltage - 1, replace=False).tolist(),
        key=ids.index,
    )
    if share is None:
        n_current = 3
    else:
        n_current = max(1, int(round(share * len(branch_ends))))
    chosen = np.sort(rng.choice(len(branch_ends), size=min(n_current, len(branch_ends)), replace=False))
    current = [branch_ends[b] for b in chosen]
    return Placement(
        scada_flow=scada_flow,
        pmu_voltage=voltage,
        pmu_current=current,
        name=f"{net.name}_{instance}",
    )


def fixture_placement(name: str, seed: int = 0) -> tuple[Network, Placement]:
    """Resolve names like '118_A' or '1888_C' to a network and placement."""
    size, _, instance = name.partition("_")
    builders = {"118": fixture_118, "1888": fixture_1888, "5": small_grid}
    if size not in builders or not instance:
        raise ValueError(f"Unknown fixture: {name}")
    net = builders[size]()
    return net, placement_instance(net, instance, seed)


def describe(net: Network, placement: Optional[Placement] = None) -> dict[str, int]:
    """Counts in the layout of the instance overview table."""
    data = {
        "nodes": net.n_nodes,
        "branches": net.n_branches,
        "zero_injection": len(net.zero_injection_ids),
    }
    if placement is not None:
        data.update(
            scada=placement.n_scada,
            v_pmu=len(placement.pmu_voltage),
            i_pmu=len(placement.pmu_current),
        )
    return data
