"""Detection and estimation of long-duration constant-thrust maneuvers from angle-only tracklets."""

from __future__ import annotations

__version__ = "0.1.0"

from ._backend import BACKEND
from .correlation import (
    CorrelationReport,
    OrbitEstimate,
    PositionWithCovariance,
    correlate_orbits,
    mahalanobis,
    mahalanobis_relaxed,
)
from .detection import DetectionResult, GridSpec, ManeuverCandidate, SearchWindow, detect, detect_impulsive
from .dynamics import (
    ForceModelConfig,
    ImpulsiveManeuver,
    InertialState,
    ManeuverPolicy,
    OrbitalElements,
    Trajectory,
    elements_to_state,
    propagate,
    state_to_elements,
)
from .estimation import (
    StackedMeasurements,
    ThrustEstimate,
    bls_orbit_determination,
    estimate_thrust,
    impulsive_estimate,
    performance_index,
)
from .observation import AngularMeasurement, Tracklet
from .scenario import Scenario, ScenarioError

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
