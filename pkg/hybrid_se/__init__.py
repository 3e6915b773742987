"""Hybrid SCADA/PMU state estimation in complex variables."""

from .complex_kernels import KernelBackend, cdot, cfma2, cmul2, pack_pairs, unpack_pairs
from .errors import (
    DegenerateIndexError,
    DimensionError,
    MeasurementError,
    NetworkError,
    PlacementError,
    PowerFlowDivergedError,
    SingularSystemError,
)
from .measurement_model import (
    ConstraintSpec,
    Measurement,
    MeasurementKind,
    MeasurementSet,
    WirtingerSystem,
    build_system,
    conjugate_rows,
    eval_constraints,
    eval_h,
    eval_jacobians,
    parse_measurements,
)
from .network_model import (
    AdmittanceMatrix,
    Network,
    StateVector,
    build_admittance,
    load_network,
    parse_network,
)
from .sparse_assembly import (
    GainSystem,
    KktSolution,
    KktSystem,
    assemble_gain,
    assemble_kkt,
    factor_solve,
)

__all__ = [
    "AdmittanceMatrix",
    "ConstraintSpec",
    "DegenerateIndexError",
    "DimensionError",
    "GainSystem",
    "KernelBackend",
    "KktSolution",
    "KktSystem",
    "Measurement",
    "MeasurementError",
    "MeasurementKind",
    "MeasurementSet",
    "Network",
    "NetworkError",
    "PlacementError",
    "PowerFlowDivergedError",
    "SingularSystemError",
    "StateVector",
    "WirtingerSystem",
    "assemble_gain",
    "assemble_kkt",
    "build_admittance",
    "build_system",
    "cdot",
    "cfma2",
    "cmul2",
    "conjugate_rows",
    "eval_constraints",
    "eval_h",
    "eval_jacobians",
    "factor_solve",
    "load_network",
    "pack_pairs",
    "parse_measurements",
    "parse_network",
    "unpack_pairs",
]
