"""Locating mobile users from sparse call detail records.

Pipeline: per-cell coverage circles with learned radius extensions, a
Move/Stay switching Kalman filter and smoother over each user's events,
nearest-road map-matching, and evaluation against GPS truth. A seeded
simulator provides synthetic worlds for testing.
"""

from .coverage import CoverageConfig, optimize_extensions, penalty, penalty_gradient
from .errors import CdrlocError
from .geo import GeoPoint, LocalPoint, LocalProjection, Segment, haversine
from .ingest import (CoverageMap, Label, build_trajectories, parse_cdr, parse_coverage,
                     parse_observations, parse_roads, parse_truth)
from .mapmatch import MatchConfig, RoadNetwork, match_point, match_trajectory
from .sim import SimConfig, generate_truth, generate_world, sample_cdr
from .skf import SkfConfig, classify_episodes, skf_filter, skf_smooth

__version__ = "0.1.0"

__all__ = [
    "CdrlocError", "CoverageConfig", "CoverageMap", "GeoPoint", "Label", "LocalPoint",
    "LocalProjection", "MatchConfig", "RoadNetwork", "Segment", "SimConfig", "SkfConfig",
    "build_trajectories", "classify_episodes", "generate_truth", "generate_world", "haversine",
    "match_point", "match_trajectory", "optimize_extensions", "parse_cdr", "parse_coverage",
    "parse_observations", "parse_roads", "parse_truth", "penalty", "penalty_gradient",
    "sample_cdr", "skf_filter", "skf_smooth",
]
