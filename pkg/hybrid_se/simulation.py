"""
Measurement Simulation Module.

Meter placements and Gaussian measurement noise on top of a true state.

Noise model:
- SCADA: additive, σ = pct · full scale. Voltage noise is applied to the
  magnitude before squaring; P and Q get independent draws.
- PMU: polar, magnitude σ = pct · full scale and angle σ in degrees.
- Zero injections: exact zeros.

Weights: the inverse of the per-component noise variance in per unit
(SCADA power σ², SCADA V² (2|V|σ)², PMU (σ_m² + |z|²σ_θ²) / 2). Rows
without noise, and every row under weighting="class", take the fixed
class weights (SCADA 1, PMU 5).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np

from .errors import PlacementError
from .measurement_model import Measurement, MeasurementKind, MeasurementSet, eval_h
from .network_model import Network, StateVector, build_admittance

K = MeasurementKind
WEIGHTING_MODES = ("inverse_variance", "class")


@dataclass
class NoiseSpec:
    """Noise levels, full-scale values and weights."""

    scada_sigma_pct: float = 2.0
    pmu_mag_sigma_pct: float = 0.5
    pmu_angle_sigma_deg: float = 0.1
    voltage_full_scale: float = 1.2
    # Overrides per measurement kind value; otherwise max true magnitude
    full_scale: dict[str, float] = field(default_factory=dict)
    seed: int = 0

    weighting: str = "inverse_variance"
    scada_weight: float = 1.0
    pmu_weight: float = 5.0
    zero_injection_weight: float = 25.0

    def __post_init__(self) -> None:
        if self.weighting not in WEIGHTING_MODES:
            raise ValueError(f"weighting must be one of {WEIGHTING_MODES}, got {self.weighting!r}")
        for name in ("scada_sigma_pct", "pmu_mag_sigma_pct", "pmu_angle_sigma_deg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.voltage_full_scale > 0:
            raise ValueError("voltage_full_scale must be positive")
        for kind, value in self.full_scale.items():
            if not value > 0:
                raise ValueError(f"full scale for {kind} must be positive")
        if min(self.scada_weight, self.pmu_weight, self.zero_injection_weight) <= 0:
            raise ValueError("weights must be positive")

    @classmethod
    def noiseless(cls, seed: int = 0) -> NoiseSpec:
        return cls(scada_sigma_pct=0.0, pmu_mag_sigma_pct=0.0, pmu_angle_sigma_deg=0.0, seed=seed)

    def weight_for(self, kind: MeasurementKind) -> float:
        if kind is K.ZERO_INJECTION_PSEUDO:
            return self.zero_injection_weight
        return self.pmu_weight if kind.is_pmu else self.scada_weight

    def weights_for(self, kind: MeasurementKind, variance: np.ndarray) -> np.ndarray:
        """Row weights 1 / variance; the class weight where the variance is zero."""
        fixed = np.full(variance.shape, self.weight_for(kind))
        if self.weighting == "class":
            return fixed
        return np.divide(1.0, variance, out=fixed, where=variance > 0)


@dataclass
class Placement:
    """
    Meter locations. Flow pairs name the measured end first.
    """

    scada_voltage: list[str] = field(default_factory=list)
    scada_injection: list[str] = field(default_factory=list)
    scada_flow: list[tuple[str, str]] = field(default_factory=list)
    pmu_voltage: list[str] = field(default_factory=list)
    pmu_current: list[tuple[str, str]] = field(default_factory=list)
    name: str = ""

    @property
    def n_scada(self) -> int:
        return len(self.scada_voltage) + len(self.scada_injection) + len(self.scada_flow)

    @property
    def n_pmu(self) -> int:
        return len(self.pmu_voltage) + len(self.pmu_current)

    @property
    def is_pmu_only(self) -> bool:
        return self.n_scada == 0

    def validate(self, net: Network) -> None:
        """Raise PlacementError for unknown nodes or flows without a branch."""
        index = net.index
        pairs = {(b.from_id, b.to_id) for b in net.branches}
        pairs |= {(t, f) for f, t in pairs}
        for group in ("scada_voltage", "scada_injection", "pmu_voltage"):
            for node_id in getattr(self, group):
                if node_id not in index:
                    raise PlacementError(f"{group}: unknown node {node_id!r}")
        for group in ("scada_flow", "pmu_current"):
            for pair in getattr(self, group):
                if tuple(pair) not in pairs:
                    raise PlacementError(f"{group}: no branch between {pair[0]!r} and {pair[1]!r}")
        if self.n_scada + self.n_pmu == 0:
            raise PlacementError("placement has no meters")

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "scada_voltage": list(self.scada_voltage),
            "scada_injection": list(self.scada_injection),
            "scada_flow": [list(p) for p in self.scada_flow],
            "pmu_voltage": list(self.pmu_voltage),
            "pmu_current": [list(p) for p in self.pmu_current],
        }
        if self.name:
            data["name"] = self.name
        return data

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def placement_from_dict(data: Any) -> Placement:
    if not isinstance(data, dict):
        raise PlacementError("placement file must contain a JSON object")

    def ids(key: str) -> list[str]:
        value = data.get(key, [])
        if not isinstance(value, list):
            raise PlacementError(f"'{key}' must be a list")
        return [str(v) for v in value]

    def flows(key: str) -> list[tuple[str, str]]:
        value = data.get(key, [])
        if not isinstance(value, list) or any(
            not isinstance(p, (list, tuple)) or len(p) != 2 for p in value
        ):
            raise PlacementError(f"'{key}' must be a list of [from, to] pairs")
        return [(str(p[0]), str(p[1])) for p in value]

    return Placement(
        scada_voltage=ids("scada_voltage"),
        scada_injection=ids("scada_injection"),
        scada_flow=flows("scada_flow"),
        pmu_voltage=ids("pmu_voltage"),
        pmu_current=flows("pmu_current"),
        name=str(data.get("name", "")),
    )


def parse_placement(text: str) -> Placement:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise PlacementError(f"placement file is not valid JSON: {e}") from e
    return placement_from_dict(data)


def load_placement(path: Union[str, Path]) -> Placement:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Placement file not found: {path}")
    placement = parse_placement(path.read_text(encoding="utf-8"))
    if not placement.name:
        placement.name = path.stem
    return placement


def placement_measurements(
    placement: Placement,
    noise: NoiseSpec,
    zero_injection_nodes: Sequence[str] = (),
) -> list[Measurement]:
    """Measurement skeletons (value 0) in placement order."""
    rows: list[Measurement] = []

    def node_row(kind: MeasurementKind, node_id: str) -> Measurement:
        return Measurement(kind, 0j, 0.0, noise.weight_for(kind), node=node_id)

    def flow_row(kind: MeasurementKind, pair: tuple[str, str]) -> Measurement:
        return Measurement(kind, 0j, 0.0, noise.weight_for(kind), from_id=pair[0], to_id=pair[1])

    rows += [node_row(K.SCADA_VOLTAGE_MAG_SQ, n) for n in placement.scada_voltage]
    rows += [node_row(K.SCADA_POWER_INJECTION, n) for n in placement.scada_injection]
    rows += [flow_row(K.SCADA_POWER_FLOW, p) for p in placement.scada_flow]
    rows += [node_row(K.PMU_VOLTAGE, n) for n in placement.pmu_voltage]
    rows += [flow_row(K.PMU_CURRENT_FLOW, p) for p in placement.pmu_current]
    rows += [node_row(K.ZERO_INJECTION_PSEUDO, n) for n in zero_injection_nodes]
    return rows


def _full_scale(kind: MeasurementKind, true_values: np.ndarray, noise: NoiseSpec) -> float:
    if kind.value in noise.full_scale:
        return noise.full_scale[kind.value]
    if kind in (K.SCADA_VOLTAGE_MAG_SQ, K.PMU_VOLTAGE):
        return noise.voltage_full_scale
    largest = float(np.max(np.abs(true_values))) if true_values.size else 0.0
    return largest if largest > 0 else 1.0


def _scale_magnitude(values: np.ndarray, mags: np.ndarray, noisy_mags: np.ndarray, power: int) -> np.ndarray:
    ratio = np.divide(noisy_mags, mags, out=np.ones_like(mags), where=mags > 0)
    return values * ratio ** power


def simulate_measurements(
    true_state: Union[StateVector, np.ndarray],
    net: Network,
    placement: Placement,
    noise: Optional[NoiseSpec] = None,
    include_zero_injection: bool = True,
) -> list[Measurement]:
    """
    Generate noisy measurements for a placement.

    Args:
        true_state: Power-flow consistent voltages.
        net: Network.
        placement: Meter locations.
        noise: Noise levels and seed; defaults to NoiseSpec().
        include_zero_injection: Append exact-zero ZeroInjectionPseudo rows for
            every zero-injection node of the network.

    Returns:
        Measurement list; identical for identical seeds.

    Raises:
        PlacementError: invalid placement.
    """
    noise = noise or NoiseSpec()
    placement.validate(net)
    u = np.asarray(getattr(true_state, "u", true_state), dtype=np.complex128)
    zi_nodes = net.zero_injection_ids if include_zero_injection else []

    skeleton = placement_measurements(placement, noise, zi_nodes)
    Y = build_admittance(net)
    mset = MeasurementSet.build(skeleton, Y)
    true_values = eval_h(u, mset, Y)
    values = true_values.copy()
    sigmas = np.zeros(len(skeleton))
    weights = np.array([meas.weight for meas in skeleton], dtype=np.float64)
    rng = np.random.default_rng(noise.seed)

    for kind in (K.SCADA_VOLTAGE_MAG_SQ, K.SCADA_POWER_INJECTION, K.SCADA_POWER_FLOW,
                 K.PMU_VOLTAGE, K.PMU_CURRENT_FLOW):
        rows = mset.rows_of(kind)
        if rows.size == 0:
            continue
        h = true_values[rows]
        if kind is K.SCADA_VOLTAGE_MAG_SQ:
            sigma = noise.scada_sigma_pct / 100.0 * _full_scale(kind, np.sqrt(np.abs(h)), noise)
            mags = np.sqrt(h.real)
            noisy = mags + sigma * rng.standard_normal(rows.size)
            values[rows] = _scale_magnitude(h, mags, noisy, 2)
            variance = (2.0 * mags * sigma) ** 2
        elif kind.is_pmu:
            sigma = noise.pmu_mag_sigma_pct / 100.0 * _full_scale(kind, h, noise)
            angle_sigma = np.deg2rad(noise.pmu_angle_sigma_deg)
            mags = np.abs(h)
            noisy = mags + sigma * rng.standard_normal(rows.size)
            rotated = h * np.exp(1j * angle_sigma * rng.standard_normal(rows.size))
            values[rows] = np.where(mags > 0, _scale_magnitude(rotated, mags, noisy, 1), noisy + 0j)
            variance = 0.5 * (sigma ** 2 + (mags * angle_sigma) ** 2)
        else:
            sigma = noise.scada_sigma_pct / 100.0 * _full_scale(kind, h, noise)
            draws = rng.standard_normal((rows.size, 2))
            values[rows] = h + sigma * (draws[:, 0] + 1j * draws[:, 1])
            variance = np.full(rows.size, sigma ** 2)
        sigmas[rows] = sigma
        weights[rows] = noise.weights_for(kind, variance)

    zi_rows = mset.rows_of(K.ZERO_INJECTION_PSEUDO)
    values[zi_rows] = 0j

    return [
        Measurement(
            kind=meas.kind,
            value=complex(values[i]),
            sigma=float(sigmas[i]),
            weight=float(weights[i]),
            node=meas.node,
            from_id=meas.from_id,
            to_id=meas.to_id,
        )
        for i, meas in enumerate(skeleton)
    ]
