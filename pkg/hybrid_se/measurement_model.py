"""
Measurement Model Module.

Evaluates the measurement functions h(x, x̄), the Wirtinger Jacobian blocks
H_x / H_x̄, and the equality constraints (zero injections + slack angle)
with their blocks J_x / J_x̄.

Functional forms (all polynomial in u and ū):
- PmuVoltage:          u_i
- PmuCurrentFlow:      y (u_i - u_j) + y_sh,i u_i        (pi-model, measured end i)
- ScadaVoltageMagSq:   u_i ū_i
- ScadaPowerInjection: u_i Σ_k Ȳ_ik ū_k                  (P + jQ in one row)
- ScadaPowerFlow:      u_i conj(branch current at i)     (P + jQ in one row)
- ZeroInjectionPseudo: same as ScadaPowerInjection
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix, diags

from .errors import MeasurementError
from .network_model import AdmittanceMatrix, Network


class MeasurementKind(Enum):
    """Measurement types; values are the exact strings of the measurement file."""
    SCADA_VOLTAGE_MAG_SQ = "ScadaVoltageMagSq"
    SCADA_POWER_INJECTION = "ScadaPowerInjection"
    SCADA_POWER_FLOW = "ScadaPowerFlow"
    PMU_VOLTAGE = "PmuVoltage"
    PMU_CURRENT_FLOW = "PmuCurrentFlow"
    ZERO_INJECTION_PSEUDO = "ZeroInjectionPseudo"

    @property
    def is_flow(self) -> bool:
        return self in (MeasurementKind.SCADA_POWER_FLOW, MeasurementKind.PMU_CURRENT_FLOW)

    @property
    def is_linear(self) -> bool:
        return self in (MeasurementKind.PMU_VOLTAGE, MeasurementKind.PMU_CURRENT_FLOW)

    @property
    def is_pmu(self) -> bool:
        return self.is_linear

    @property
    def is_real_valued(self) -> bool:
        return self is MeasurementKind.SCADA_VOLTAGE_MAG_SQ


_KINDS = list(MeasurementKind)
_CODE = {kind: code for code, kind in enumerate(_KINDS)}


@dataclass(frozen=True)
class Measurement:
    """
    One complex measurement.

    Node kinds use `node`; flow kinds are located at the `from_id` end of the
    branch between `from_id` and `to_id`.
    """

    kind: MeasurementKind
    value: complex
    sigma: float
    weight: float
    node: Optional[str] = None
    from_id: Optional[str] = None
    to_id: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.weight > 0:
            raise MeasurementError(f"{self.kind.value}: weight must be positive, got {self.weight}")
        if not self.sigma >= 0:
            raise MeasurementError(f"{self.kind.value}: sigma must be non-negative, got {self.sigma}")
        if self.kind.is_flow:
            if self.from_id is None or self.to_id is None:
                raise MeasurementError(f"{self.kind.value} needs 'from' and 'to'")
        elif self.node is None:
            raise MeasurementError(f"{self.kind.value} needs 'node'")

    @property
    def location(self) -> str:
        if self.kind.is_flow:
            return f"{self.from_id}->{self.to_id}"
        return str(self.node)

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"kind": self.kind.value}
        if self.kind.is_flow:
            data["from"] = self.from_id
            data["to"] = self.to_id
        else:
            data["node"] = self.node
        data["value_re"] = float(self.value.real)
        data["value_im"] = float(self.value.imag)
        data["sigma"] = float(self.sigma)
        data["weight"] = float(self.weight)
        return data


@dataclass(frozen=True)
class MeasurementSet:
    """Index-resolved, vectorised view of a measurement list."""

    measurements: tuple[Measurement, ...]
    kind: np.ndarray      # int codes into MeasurementKind
    node: np.ndarray      # measured node index
    far: np.ndarray       # far node index for flow kinds, -1 otherwise
    branch: np.ndarray    # branch index for flow kinds, -1 otherwise
    end: np.ndarray       # 0 = from end, 1 = to end
    z: np.ndarray
    sigma: np.ndarray
    weight: np.ndarray

    @classmethod
    def build(cls, measurements: Sequence[Measurement], Y: AdmittanceMatrix) -> MeasurementSet:
        """
        Resolve node ids and branch ends against the admittance model.

        Raises:
            MeasurementError: unknown node or no branch between the given nodes.
        """
        m = len(measurements)
        kind = np.zeros(m, dtype=np.int64)
        node = np.zeros(m, dtype=np.int64)
        far = np.full(m, -1, dtype=np.int64)
        branch = np.full(m, -1, dtype=np.int64)
        end = np.zeros(m, dtype=np.int64)
        index = Y.node_index

        def resolve(node_id: Optional[str], meas: Measurement) -> int:
            if node_id not in index:
                raise MeasurementError(
                    f"{meas.kind.value} at {meas.location}: unknown node {node_id!r}"
                )
            return index[node_id]

        for row, meas in enumerate(measurements):
            kind[row] = _CODE[meas.kind]
            if meas.kind.is_flow:
                i = resolve(meas.from_id, meas)
                j = resolve(meas.to_id, meas)
                if (i, j) not in Y.branch_lookup:
                    raise MeasurementError(
                        f"{meas.kind.value} at {meas.location}: no branch between these nodes"
                    )
                node[row], far[row] = i, j
                branch[row], end[row] = Y.branch_lookup[(i, j)]
            else:
                node[row] = resolve(meas.node, meas)

        return cls(
            measurements=tuple(measurements),
            kind=kind,
            node=node,
            far=far,
            branch=branch,
            end=end,
            z=np.array([meas.value for meas in measurements], dtype=np.complex128),
            sigma=np.array([meas.sigma for meas in measurements], dtype=np.float64),
            weight=np.array([meas.weight for meas in measurements], dtype=np.float64),
        )

    def __len__(self) -> int:
        return len(self.measurements)

    def rows_of(self, *kinds: MeasurementKind) -> np.ndarray:
        codes = [_CODE[k] for k in kinds]
        return np.flatnonzero(np.isin(self.kind, codes))

    @property
    def is_linear(self) -> bool:
        return bool(np.all(np.isin(self.kind, [_CODE[k] for k in _KINDS if k.is_linear])))


@dataclass(frozen=True)
class ConstraintSpec:
    """Zero-injection nodes plus the slack node whose angle is fixed."""

    zero_injection_nodes: tuple[str, ...]
    slack: str

    def __post_init__(self) -> None:
        if len(set(self.zero_injection_nodes)) != len(self.zero_injection_nodes):
            raise MeasurementError("zero-injection nodes must be distinct")
        if self.slack in self.zero_injection_nodes:
            raise MeasurementError(f"slack node {self.slack!r} cannot be a zero-injection node")

    @classmethod
    def from_network(
        cls,
        net: Network,
        measurements: Iterable[Measurement] = (),
    ) -> ConstraintSpec:
        """Network zero-injection flags plus any ZeroInjectionPseudo measurement nodes."""
        nodes = list(net.zero_injection_ids)
        for meas in measurements:
            if meas.kind is MeasurementKind.ZERO_INJECTION_PSEUDO and meas.node not in nodes:
                nodes.append(str(meas.node))
        return cls(tuple(nodes), net.slack)

    @property
    def n_zero_injection(self) -> int:
        return len(self.zero_injection_nodes)

    @property
    def n_rows(self) -> int:
        """Constraint rows: one per zero injection plus the slack-angle row."""
        return self.n_zero_injection + 1

    def node_indices(self, Y: AdmittanceMatrix) -> tuple[np.ndarray, int]:
        index = Y.node_index
        for node_id in (*self.zero_injection_nodes, self.slack):
            if node_id not in index:
                raise MeasurementError(f"constraint refers to unknown node {node_id!r}")
        zi = np.array([index[n] for n in self.zero_injection_nodes], dtype=np.int64)
        return zi, index[self.slack]


@dataclass
class WirtingerSystem:
    """Residuals, Jacobian blocks and constraint data for one linearization."""

    r: np.ndarray
    Hx: csr_matrix
    Hxbar: csr_matrix
    s: np.ndarray
    Jx: csr_matrix
    Jxbar: csr_matrix
    W: np.ndarray
    h: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.complex128))
    real_rows: int = 1

    @property
    def m(self) -> int:
        return self.Hx.shape[0]

    @property
    def n(self) -> int:
        return self.Hx.shape[1]

    @property
    def c(self) -> int:
        return self.Jx.shape[0]

    def objective(self) -> float:
        """Weighted residual sum Σ w_i |r_i|²."""
        return float(np.sum(self.W * np.abs(self.r) ** 2))


# --------------------------------------------------------------------------
# Row helpers
# --------------------------------------------------------------------------

def _expand_rows(Y: csr_matrix, nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gather the stored entries of the given rows of a CSR matrix.

    Returns:
        (position in `nodes`, column index, value) for every stored entry.
    """
    starts = Y.indptr[nodes]
    lengths = Y.indptr[nodes + 1] - starts
    total = int(lengths.sum())
    owner = np.repeat(np.arange(len(nodes)), lengths)
    offsets = np.arange(total) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    flat = np.repeat(starts, lengths) + offsets
    return owner, Y.indices[flat], Y.data[flat]


class _Triplets:
    """Accumulates COO triplets for one sparse block."""

    def __init__(self) -> None:
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []

    def add(self, rows: np.ndarray, cols: np.ndarray, vals: np.ndarray) -> None:
        self.rows.append(np.asarray(rows, dtype=np.int64))
        self.cols.append(np.asarray(cols, dtype=np.int64))
        self.vals.append(np.asarray(vals, dtype=np.complex128))

    def to_csr(self, shape: tuple[int, int]) -> csr_matrix:
        if not self.rows:
            return csr_matrix(shape, dtype=np.complex128)
        mat = coo_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=shape,
        ).tocsr()
        mat.sum_duplicates()
        mat.sort_indices()
        return mat


def _injection_rows(
    u: np.ndarray,
    current: np.ndarray,
    nodes: np.ndarray,
    rows: np.ndarray,
    Y: AdmittanceMatrix,
    hx: _Triplets,
    hxbar: _Triplets,
) -> np.ndarray:
    """s_i = u_i conj(I_i); ∂/∂u_i = conj(I_i), ∂/∂ū_k = Ȳ_ik u_i."""
    hx.add(rows, nodes, np.conj(current[nodes]))
    owner, cols, vals = _expand_rows(Y.ybus, nodes)
    hxbar.add(rows[owner], cols, np.conj(vals) * u[nodes[owner]])
    return u[nodes] * np.conj(current[nodes])


def _flow_terms(mset: MeasurementSet, rows: np.ndarray, Y: AdmittanceMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients (a, y) of the measured-end current a·u_i − y·u_j."""
    b = mset.branch[rows]
    y = Y.y_series[b]
    sh = np.where(mset.end[rows] == 0, Y.y_sh_from[b], Y.y_sh_to[b])
    return y + sh, y


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------

def _evaluate(
    u: np.ndarray,
    mset: MeasurementSet,
    Y: AdmittanceMatrix,
    with_jacobians: bool,
) -> tuple[np.ndarray, Optional[csr_matrix], Optional[csr_matrix]]:
    u = np.asarray(u, dtype=np.complex128)
    m, n = len(mset), Y.n
    h = np.zeros(m, dtype=np.complex128)
    hx, hxbar = _Triplets(), _Triplets()
    current = Y.ybus @ u

    K = MeasurementKind
    rows = mset.rows_of(K.PMU_VOLTAGE)
    if rows.size:
        i = mset.node[rows]
        h[rows] = u[i]
        hx.add(rows, i, np.ones(rows.size))

    rows = mset.rows_of(K.SCADA_VOLTAGE_MAG_SQ)
    if rows.size:
        i = mset.node[rows]
        h[rows] = u[i] * np.conj(u[i])
        hx.add(rows, i, np.conj(u[i]))
        hxbar.add(rows, i, u[i])

    rows = mset.rows_of(K.SCADA_POWER_INJECTION, K.ZERO_INJECTION_PSEUDO)
    if rows.size:
        h[rows] = _injection_rows(u, current, mset.node[rows], rows, Y, hx, hxbar)

    rows = mset.rows_of(K.PMU_CURRENT_FLOW)
    if rows.size:
        i, j = mset.node[rows], mset.far[rows]
        a, y = _flow_terms(mset, rows, Y)
        h[rows] = a * u[i] - y * u[j]
        hx.add(rows, i, a)
        hx.add(rows, j, -y)

    rows = mset.rows_of(K.SCADA_POWER_FLOW)
    if rows.size:
        i, j = mset.node[rows], mset.far[rows]
        a, y = _flow_terms(mset, rows, Y)
        flow_current = a * u[i] - y * u[j]
        h[rows] = u[i] * np.conj(flow_current)
        hx.add(rows, i, np.conj(flow_current))
        hxbar.add(rows, i, u[i] * np.conj(a))
        hxbar.add(rows, j, -u[i] * np.conj(y))

    if not with_jacobians:
        return h, None, None
    return h, hx.to_csr((m, n)), hxbar.to_csr((m, n))


def eval_h(u: np.ndarray, mset: MeasurementSet, Y: AdmittanceMatrix) -> np.ndarray:
    """
    Evaluate the measurement functions at state u.

    Args:
        u: Complex node voltages (length n).
        mset: Resolved measurement set.
        Y: Admittance model.

    Returns:
        Complex vector h (length m).
    """
    return _evaluate(u, mset, Y, with_jacobians=False)[0]


def eval_jacobians(
    u: np.ndarray,
    mset: MeasurementSet,
    Y: AdmittanceMatrix,
) -> tuple[csr_matrix, csr_matrix]:
    """Wirtinger Jacobian blocks (H_x, H_x̄), each m×n."""
    _, Hx, Hxbar = _evaluate(u, mset, Y, with_jacobians=True)
    return Hx, Hxbar


def eval_h_and_jacobians(
    u: np.ndarray,
    mset: MeasurementSet,
    Y: AdmittanceMatrix,
) -> tuple[np.ndarray, csr_matrix, csr_matrix]:
    """h together with its Jacobian blocks from one pass over the rows."""
    return _evaluate(u, mset, Y, with_jacobians=True)  # type: ignore[return-value]


def eval_constraints(
    u: np.ndarray,
    cs: ConstraintSpec,
    Y: AdmittanceMatrix,
) -> tuple[np.ndarray, csr_matrix, csr_matrix]:
    """
    Evaluate the equality constraints.

    Rows 0..k-1 are the zero-injection powers s_i; the last row is the
    slack-angle value Im(u_s) = (j/2)(ū_s − u_s) with ∂/∂u_s = −j/2 and
    ∂/∂ū_s = +j/2.

    Returns:
        (s, J_x, J_x̄) with c = k + 1 rows.
    """
    u = np.asarray(u, dtype=np.complex128)
    zi, slack = cs.node_indices(Y)
    k = zi.size
    c, n = k + 1, Y.n
    s = np.zeros(c, dtype=np.complex128)
    jx, jxbar = _Triplets(), _Triplets()

    if k:
        current = Y.ybus @ u
        s[:k] = _injection_rows(u, current, zi, np.arange(k), Y, jx, jxbar)

    s[k] = 0.5j * (np.conj(u[slack]) - u[slack])
    jx.add([k], [slack], [-0.5j])
    jxbar.add([k], [slack], [0.5j])
    return s, jx.to_csr((c, n)), jxbar.to_csr((c, n))


def conjugate_rows(
    s: np.ndarray,
    Jx: csr_matrix,
    Jxbar: csr_matrix,
) -> tuple[np.ndarray, csr_matrix, csr_matrix]:
    """
    Constraint data of the conjugated constraints s̄.

    ∂s̄/∂x = conj(∂s/∂x̄) and ∂s̄/∂x̄ = conj(∂s/∂x), so the blocks swap and
    conjugate.

    Returns:
        (s̄, J̄_x̄, J̄_x); x-block first, then the x̄-block.
    """
    return np.conj(s), Jxbar.conjugate().tocsr(), Jx.conjugate().tocsr()


def build_system(
    u: np.ndarray,
    mset: MeasurementSet,
    cs: Optional[ConstraintSpec],
    Y: AdmittanceMatrix,
) -> WirtingerSystem:
    """Assemble residuals, Jacobians and constraints at state u."""
    h, Hx, Hxbar = eval_h_and_jacobians(u, mset, Y)
    if cs is None:
        n = Y.n
        s = np.zeros(0, dtype=np.complex128)
        Jx = csr_matrix((0, n), dtype=np.complex128)
        Jxbar = csr_matrix((0, n), dtype=np.complex128)
        real_rows = 0
    else:
        s, Jx, Jxbar = eval_constraints(u, cs, Y)
        real_rows = 1
    return WirtingerSystem(
        r=mset.z - h,
        Hx=Hx,
        Hxbar=Hxbar,
        s=s,
        Jx=Jx,
        Jxbar=Jxbar,
        W=mset.weight.copy(),
        h=h,
        real_rows=real_rows,
    )


def polar_jacobian(
    Hx: csr_matrix,
    Hxbar: csr_matrix,
    u: np.ndarray,
) -> tuple[csr_matrix, csr_matrix]:
    """
    Derivatives with respect to polar coordinates (θ, V) from Wirtinger blocks.

    du = j·u·dθ + e^{jθ}·dV and dū = −j·ū·dθ + e^{−jθ}·dV.

    Returns:
        (∂h/∂θ, ∂h/∂V) as complex m×n matrices.
    """
    u = np.asarray(u, dtype=np.complex128)
    phase = u / np.abs(u)
    d_theta = Hx @ diags(1j * u) + Hxbar @ diags(-1j * np.conj(u))
    d_mag = Hx @ diags(phase) + Hxbar @ diags(np.conj(phase))
    return d_theta.tocsr(), d_mag.tocsr()


# --------------------------------------------------------------------------
# Measurement file I/O
# --------------------------------------------------------------------------

_PAIRABLE = (MeasurementKind.SCADA_POWER_INJECTION, MeasurementKind.SCADA_POWER_FLOW)


def _record_to_measurement(record: dict[str, Any], line_no: int) -> Measurement:
    try:
        kind = MeasurementKind(record["kind"])
    except (KeyError, ValueError):
        raise MeasurementError(f"line {line_no}: unknown measurement kind {record.get('kind')!r}")
    try:
        value = complex(float(record.get("value_re", 0.0)), float(record.get("value_im", 0.0)))
        sigma = float(record.get("sigma", 0.0))
        weight = float(record["weight"])
    except (KeyError, TypeError, ValueError) as e:
        raise MeasurementError(f"line {line_no}: bad numeric field ({e})")
    node = record.get("node")
    return Measurement(
        kind=kind,
        value=value,
        sigma=sigma,
        weight=weight,
        node=None if node is None else str(node),
        from_id=None if record.get("from") is None else str(record["from"]),
        to_id=None if record.get("to") is None else str(record["to"]),
    )


def parse_measurements(text: str, net: Optional[Network] = None) -> list[Measurement]:
    """
    Parse a JSON-lines measurement file.

    Lines carrying "component": "P" or "Q" on power kinds are merged into
    one complex measurement P + jQ with the smaller of the two weights.

    Args:
        text: File content, one JSON object per line.
        net: Optional network used to validate node ids.

    Returns:
        Measurements in file order (a merged pair takes the position of its
        first line).
    """
    measurements: list[Optional[Measurement]] = []
    pending: dict[tuple, tuple[int, dict[str, Measurement]]] = {}

    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise MeasurementError(f"line {line_no}: invalid JSON ({e})")
        if not isinstance(record, dict):
            raise MeasurementError(f"line {line_no}: expected a JSON object")
        meas = _record_to_measurement(record, line_no)

        if net is not None:
            for node_id in (meas.node, meas.from_id, meas.to_id):
                if node_id is not None and node_id not in net.index:
                    raise MeasurementError(f"line {line_no}: unknown node {node_id!r}")

        component = record.get("component")
        if component is None:
            measurements.append(meas)
            continue
        if meas.kind not in _PAIRABLE or component not in ("P", "Q"):
            raise MeasurementError(
                f"line {line_no}: component {component!r} not valid for {meas.kind.value}"
            )
        key = (meas.kind, meas.node, meas.from_id, meas.to_id)
        if key not in pending:
            pending[key] = (len(measurements), {})
            measurements.append(None)
        slot, parts = pending[key]
        if component in parts:
            raise MeasurementError(f"line {line_no}: duplicate {component} for {meas.location}")
        parts[component] = meas

    for key, (slot, parts) in pending.items():
        if len(parts) != 2:
            missing = "Q" if "P" in parts else "P"
            only = next(iter(parts.values()))
            raise MeasurementError(f"{only.kind.value} at {only.location}: missing {missing} component")
        p, q = parts["P"], parts["Q"]
        measurements[slot] = Measurement(
            kind=p.kind,
            value=complex(p.value.real, q.value.real),
            sigma=max(p.sigma, q.sigma),
            weight=min(p.weight, q.weight),
            node=p.node,
            from_id=p.from_id,
            to_id=p.to_id,
        )

    return [meas for meas in measurements if meas is not None]


def measurements_to_jsonl(measurements: Iterable[Measurement]) -> str:
    """Serialize measurements to the JSON-lines file format."""
    return "\n".join(json.dumps(meas.to_dict()) for meas in measurements) + "\n"


def strip_pseudo(measurements: Iterable[Measurement]) -> list[Measurement]:
    """Drop ZeroInjectionPseudo rows (they are carried by the ConstraintSpec)."""
    return [m for m in measurements if m.kind is not MeasurementKind.ZERO_INJECTION_PSEUDO]
