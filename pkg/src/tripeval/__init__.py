"""Road-network level utility evaluation of synthetic trip datasets."""

from .errors import TripEvalError
from .geo import BBox, GeoPoint, Grid, Trajectory, Variant, hausdorff, haversine, path_length, straight_line
from .matcher import MatchResult, match_dataset, match_trace, matchability_gate
from .network import RoadNetwork, load_network, route_od, shortest_path
from .synth import MarkovTripModel, PrivacyBudget, fit_model, generate_trips, laplace_perturb

__all__ = [
    "BBox",
    "GeoPoint",
    "Grid",
    "MarkovTripModel",
    "MatchResult",
    "PrivacyBudget",
    "RoadNetwork",
    "Trajectory",
    "TripEvalError",
    "Variant",
    "fit_model",
    "generate_trips",
    "hausdorff",
    "haversine",
    "laplace_perturb",
    "load_network",
    "match_dataset",
    "match_trace",
    "matchability_gate",
    "path_length",
    "route_od",
    "shortest_path",
    "straight_line",
]
