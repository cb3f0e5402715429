"""Synthetic networks and trip sets with known ground truth.

Used by the test suite and for trying the pipeline without real data.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .geo import M_PER_DEG, BBox, Trajectory, Variant, project, unproject
from .network import Candidate, network_bbox, RoadNetwork, _assemble, candidate_route, nearest_edge_candidates

ORIGIN = (13.30, 52.50)


def manhattan_network(n: int = 20, block_m: float = 100.0, origin: tuple[float, float] = ORIGIN) -> RoadNetwork:
    """An n x n block grid: (n+1)^2 nodes and 2n(n+1) two-way edges.

    Node ``j*(n+1)+i`` sits at column i, row j counted from the southwest.
    """
    lon0, lat0 = origin
    dlat = block_m / M_PER_DEG
    dlon = block_m / (M_PER_DEG * math.cos(math.radians(lat0)))
    nodes = {}
    for j in range(n + 1):
        for i in range(n + 1):
            nodes[str(j * (n + 1) + i)] = (lon0 + i * dlon, lat0 + j * dlat)
    edges = []
    eid = 0
    for j in range(n + 1):
        for i in range(n):
            edges.append((str(eid), str(j * (n + 1) + i), str(j * (n + 1) + i + 1), False, None))
            eid += 1
    for j in range(n):
        for i in range(n + 1):
            edges.append((str(eid), str(j * (n + 1) + i), str((j + 1) * (n + 1) + i), False, None))
            eid += 1
    return RoadNetwork.from_records(nodes, edges)


def random_edge_point(net: RoadNetwork, rng: np.random.Generator, min_frac: float = 0.2) -> Candidate:
    """A uniformly chosen directed edge and an offset away from its ends."""
    ei = int(rng.integers(len(net.edges)))
    length = net.edges[ei].length
    off = float(rng.uniform(min_frac, 1.0 - min_frac)) * length
    p = net.point_at(ei, off)
    return Candidate(ei, net.edges[ei].edge_id, p, off, 0.0)


def random_routes(net: RoadNetwork, n: int, seed: int, min_length: float = 300.0):
    """``n`` shortest routes between random on-edge points, as Route objects."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        a, b = random_edge_point(net, rng), random_edge_point(net, rng)
        r = candidate_route(net, a, b)
        if r is None or r[0] < min_length:
            continue
        out.append(_assemble(net, r[1], f"r{len(out):04d}", Variant.ROUTED))
    return out


def sample_along(coords: np.ndarray, spacing: float, lat0: float | None = None) -> np.ndarray:
    """Points every ``spacing`` meters along a polyline, including both ends."""
    lon0 = float(coords[0, 0])
    lat0 = float(coords[0, 1]) if lat0 is None else lat0
    xy = project(coords, lon0, lat0)
    seg = np.hypot(*(xy[1:] - xy[:-1]).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    k = max(1, int(math.ceil(total / spacing)))
    s = np.linspace(0.0, total, k + 1)
    x = np.interp(s, cum, xy[:, 0])
    y = np.interp(s, cum, xy[:, 1])
    return unproject(np.column_stack([x, y]), lon0, lat0)


def noisy_trace(coords: np.ndarray, spacing: float, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Sample a polyline every ``spacing`` meters and add isotropic Gaussian noise (sigma per axis)."""
    pts = sample_along(coords, spacing)
    lon0, lat0 = float(pts[0, 0]), float(pts[0, 1])
    xy = project(pts, lon0, lat0) + rng.normal(0.0, sigma, size=pts.shape)
    return unproject(xy, lon0, lat0)


def _node_xy(n: int, node: str) -> tuple[int, int]:
    k = int(node)
    return k % (n + 1), k // (n + 1)


def grid_path(net: RoadNetwork, n: int, waypoints: list[tuple[int, int]], trip_id: str) -> Trajectory:
    """Polyline through grid nodes visiting ``waypoints`` (col, row) with axis-aligned legs."""
    pts = []
    legs = list(zip(waypoints[:-1], waypoints[1:]))
    for k, ((c0, r0), (c1, r1)) in enumerate(legs):
        if c0 != c1 and r0 != r1:
            raise ValueError("waypoint legs must be axis-aligned")
        steps = max(abs(c1 - c0), abs(r1 - r0))
        for s in range(steps + (1 if k == len(legs) - 1 else 0)):
            c = c0 + (np.sign(c1 - c0) * s)
            r = r0 + (np.sign(r1 - r0) * s)
            pts.append(net.nodes[str(int(r) * (n + 1) + int(c))])
    return Trajectory(trip_id, pts, Variant.ORIGINAL)


def detour_dataset(net: RoadNetwork, n: int, seed: int = 0, n_background: int = 200, n_detour: int = 30):
    """Trips on the Manhattan fixture with two planted preferred corridors.

    Returns ``(trips, corridors)`` where every trip is a node-to-node path and
    ``corridors`` maps a name to the node path of the planted detour leg (the
    cells of these legs should come out as 'preferred').  Background trips are
    straight single-street trips, so their shortest route equals the trip.
    """
    rng = np.random.default_rng(seed)
    trips: list[Trajectory] = []
    # corridor A: riders going east along row 4 detour north via row 7
    # corridor B: riders going north along column 14 detour east via column 17
    corridors = {
        "A": [(4, 7), (12, 7)],
        "B": [(17, 10), (17, 16)],
    }
    for k in range(n_detour):
        trips.append(grid_path(net, n, [(3, 4), (4, 4), (4, 7), (12, 7), (12, 4), (13, 4)], f"dA{k:03d}"))
    for k in range(n_detour):
        trips.append(grid_path(net, n, [(14, 9), (14, 10), (17, 10), (17, 16), (14, 16), (14, 17)], f"dB{k:03d}"))
    for k in range(n_background):
        if rng.random() < 0.5:
            r = int(rng.integers(0, n + 1))
            c0, c1 = sorted(rng.choice(n + 1, size=2, replace=False).tolist())
            trips.append(grid_path(net, n, [(c0, r), (c1, r)], f"bg{k:04d}"))
        else:
            c = int(rng.integers(0, n + 1))
            r0, r1 = sorted(rng.choice(n + 1, size=2, replace=False).tolist())
            trips.append(grid_path(net, n, [(c, r0), (c, r1)], f"bg{k:04d}"))
    return trips, corridors


def gps_trips(net: RoadNetwork, n_trips: int, seed: int, spacing: float = 20.0, sigma: float = 0.0, prefix: str = "t"):
    """GPS-like raw trips: shortest routes between random on-edge points, resampled and optionally noised."""
    rng = np.random.default_rng(seed)
    routes = random_routes(net, n_trips, seed)
    out = []
    for k, r in enumerate(routes):
        if sigma > 0:
            pts = noisy_trace(r.polyline.coords, spacing, sigma, rng)
        else:
            pts = sample_along(r.polyline.coords, spacing)
        out.append(Trajectory(f"{prefix}{k:05d}", pts, Variant.ORIGINAL))
    return out, routes


def nearest_candidate(net: RoadNetwork, p, radius: float = 50.0) -> Candidate:
    return nearest_edge_candidates(net, p, radius)[0]


def hub_trips(net: RoadNetwork, n: int, n_trips: int, seed: int, n_hubs: int = 6, spacing: float = 50.0, prefix: str = "h"):
    """Commuting-style trips between a few hub intersections.

    Origins and destinations sit on edges incident to randomly chosen hub
    nodes, so the OD table is concentrated on a handful of cell pairs.
    """
    rng = np.random.default_rng(seed)
    hubs = rng.choice((n + 1) ** 2, size=n_hubs, replace=False)
    incident = {int(h): [i for i, e in enumerate(net.edges) if e.source == str(h)] for h in hubs}
    out = []
    while len(out) < n_trips:
        a, b = rng.choice(hubs, size=2, replace=False)
        ends = []
        for h in (a, b):
            ei = int(rng.choice(incident[int(h)]))
            off = float(rng.uniform(0.0, 0.5)) * net.edges[ei].length
            ends.append(Candidate(ei, net.edges[ei].edge_id, net.point_at(ei, off), off, 0.0))
        r = candidate_route(net, ends[0], ends[1])
        if r is None or r[0] <= 0:
            continue
        route = _assemble(net, r[1], "tmp", Variant.ROUTED)
        out.append(Trajectory(f"{prefix}{len(out):05d}", sample_along(route.polyline.coords, spacing), Variant.ORIGINAL))
    return out


def intersection_box(net: RoadNetwork, n: int, col: int, row: int, half_m: float = 60.0) -> BBox:
    """Square box of half-width ``half_m`` around grid node (col, row)."""
    lon, lat = net.nodes[str(row * (n + 1) + col)]
    dlat = half_m / M_PER_DEG
    dlon = half_m / (M_PER_DEG * math.cos(math.radians(lat)))
    return BBox(lon - dlon, lat - dlat, lon + dlon, lat + dlat)


def write_demo(directory, n_background: int = 940, n_detour: int = 30, seed: int = 0, spacing: float = 20.0) -> Path:
    """Write a complete demo run (network, raw trips with planted detours, config) and return the config path."""
    import json

    from .io import write_trajectories
    from .network import write_network

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    n = 20
    net = manhattan_network(n)
    write_network(net, d / "nodes.csv", d / "edges.csv")
    trips, _ = detour_dataset(net, n, seed, n_background, n_detour)
    raw = [Trajectory(t.id, sample_along(t.coords, spacing), Variant.ORIGINAL) for t in trips]
    write_trajectories(raw, d / "raw.csv")
    config = {
        "network": {"nodes": "nodes.csv", "edges": "edges.csv"},
        "raw": "raw.csv",
        "out_dir": "out",
        "bbox": network_bbox(net, 50.0).as_list(),
        "synthesis": {"name": "markov", "n_trips": 1000, "repeats": 2, "seed": 7, "adaptive_threshold": 50},
        "intersections": [
            {"name": "detour_a", "bbox": intersection_box(net, n, 4, 7).as_list()},
            {"name": "detour_b", "bbox": intersection_box(net, n, 17, 10).as_list()},
            {"name": "center", "bbox": intersection_box(net, n, 10, 10).as_list()},
        ],
    }
    path = d / "config.json"
    path.write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return path
