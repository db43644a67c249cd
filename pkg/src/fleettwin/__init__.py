"""Desk-scale digital twin of a centralized traffic manager for small autonomous cars."""

__version__ = "0.1.0"

from .conflict import SeparationParams, detect, detect_all, replan, resolve_all  # noqa: E402
from .engine import Metrics, SimConfig, lag_experiment, run  # noqa: E402
from .frenet import FrenetState, to_euclidean, to_frenet  # noqa: E402
from .manager import ManagerMode, TrafficManager  # noqa: E402
from .planner import PlannerParams, Trajectory, plan  # noqa: E402
from .roadgraph import Path, RoadGraph, a_star, build_default_map  # noqa: E402

__all__ = [
    "FrenetState", "ManagerMode", "Metrics", "Path", "PlannerParams", "RoadGraph",
    "SeparationParams", "SimConfig", "TrafficManager", "Trajectory", "a_star",
    "build_default_map", "detect", "detect_all", "lag_experiment", "plan", "replan",
    "resolve_all", "run", "to_euclidean", "to_frenet",
]
