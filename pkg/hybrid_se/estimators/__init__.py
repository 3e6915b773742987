"""
Hybrid State Estimators.

Available estimators:
- CecEstimator: complex equality-constrained normal equations (default)
- CneEstimator: complex normal equations with pseudo-measurement constraints
- RecEstimator: real polar-coordinate equality-constrained baseline
"""

from __future__ import annotations

from typing import Optional, Sequence

from ..measurement_model import ConstraintSpec, Measurement
from ..network_model import Network
from .base import (
    EstimationProblem,
    EstimationResult,
    EstimatorConfig,
    EstimatorType,
    StateEstimator,
    StepOutcome,
    check_convergence,
)
from .cec import CecConfig, CecEstimator, create_cec_estimator, stationarity_residual
from .cne import CneConfig, CneEstimator, create_cne_estimator
from .rec import RecConfig, RecEstimator, create_rec_estimator

ESTIMATOR_MAP = {
    "cec": EstimatorType.CEC,
    "cne": EstimatorType.CNE,
    "rec": EstimatorType.REC,
}


def create_estimator(estimator_type: EstimatorType, **kwargs) -> StateEstimator:
    """
    Factory function to create an estimator by type.

    Args:
        estimator_type: Type of estimator to create.
        **kwargs: EstimatorConfig fields.

    Returns:
        Configured StateEstimator instance.
    """
    kwargs.pop("estimator_type", None)
    if estimator_type == EstimatorType.CEC:
        return create_cec_estimator(**kwargs)
    elif estimator_type == EstimatorType.CNE:
        return create_cne_estimator(**kwargs)
    elif estimator_type == EstimatorType.REC:
        return create_rec_estimator(**kwargs)
    else:
        raise ValueError(f"Unknown estimator type: {estimator_type}")


def _config_kwargs(cfg: Optional[EstimatorConfig]) -> dict:
    if cfg is None:
        return {}
    return {
        name: getattr(cfg, name)
        for name in EstimatorConfig.__dataclass_fields__
        if name != "estimator_type"
    }


def run_cec(
    net: Network,
    meas: Sequence[Measurement],
    cs: Optional[ConstraintSpec] = None,
    cfg: Optional[EstimatorConfig] = None,
) -> EstimationResult:
    """Run the CEC estimator with the given (or default) configuration."""
    return create_cec_estimator(**_config_kwargs(cfg)).estimate(net, meas, cs)


def run_cne(
    net: Network,
    meas: Sequence[Measurement],
    cs: Optional[ConstraintSpec] = None,
    cfg: Optional[EstimatorConfig] = None,
) -> EstimationResult:
    """Run the CNE estimator with the given (or default) configuration."""
    return create_cne_estimator(**_config_kwargs(cfg)).estimate(net, meas, cs)


def run_rec(
    net: Network,
    meas: Sequence[Measurement],
    cs: Optional[ConstraintSpec] = None,
    cfg: Optional[EstimatorConfig] = None,
) -> EstimationResult:
    """Run the REC estimator with the given (or default) configuration."""
    return create_rec_estimator(**_config_kwargs(cfg)).estimate(net, meas, cs)


__all__ = [
    # Base classes
    "EstimatorType",
    "EstimatorConfig",
    "EstimationProblem",
    "EstimationResult",
    "StateEstimator",
    "StepOutcome",
    "check_convergence",
    # CEC
    "CecEstimator",
    "CecConfig",
    "create_cec_estimator",
    "stationarity_residual",
    # CNE
    "CneEstimator",
    "CneConfig",
    "create_cne_estimator",
    # REC
    "RecEstimator",
    "RecConfig",
    "create_rec_estimator",
    # Factory and runners
    "ESTIMATOR_MAP",
    "create_estimator",
    "run_cec",
    "run_cne",
    "run_rec",
]
