"""Drift-robust 2D exploration: pose-graph of labeled local free-space
polygons with scoped frontier consolidation, plus occupancy-grid baselines."""

from .geom2d import Pose2, Polygon, Segment
from .environment import GridEnvironment, DepthScan, load_environment, cast_scan, line_of_sight
from .local_volume import EdgeLabel, LocalVolume, build_local_volume
from .pose_graph import PoseGraph, EdgeKind
from .consolidation import Consolidator, consolidate, total_frontier_length
from .sim_runner import NoiseModel, RunConfig, RunResult, run

__all__ = [
    "Pose2", "Polygon", "Segment",
    "GridEnvironment", "DepthScan", "load_environment", "cast_scan", "line_of_sight",
    "EdgeLabel", "LocalVolume", "build_local_volume",
    "PoseGraph", "EdgeKind",
    "Consolidator", "consolidate", "total_frontier_length",
    "NoiseModel", "RunConfig", "RunResult", "run",
]
