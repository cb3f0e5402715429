"""Road network model, candidate lookup and shortest-path routing."""

from __future__ import annotations

import csv
import heapq
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix

from .errors import DanglingReferenceError, NetworkParseError, NoRouteError, RoutingFailedError
from .geo import M_PER_DEG, BBox, GeoPoint, Trajectory, Variant, check_coords, path_length, project, segment_lengths
from .parallel import pmap

INDEX_CELL_M = 50.0


def natural_key(value: str) -> tuple:
    """Sort numeric ids numerically and everything else lexically after them."""
    try:
        return (0, int(value), "")
    except ValueError:
        return (1, 0, value)


@dataclass(frozen=True)
class Edge:
    """One directed edge.  A two-way road is stored as two Edges sharing ``edge_id``."""

    edge_id: str
    source: str
    target: str
    geometry: np.ndarray
    length: float
    oneway: bool
    forward: bool = True


@dataclass(frozen=True)
class Candidate:
    """Projection of a point onto a directed edge."""

    edge: int
    edge_id: str
    point: GeoPoint
    offset: float
    distance: float


@dataclass(frozen=True)
class Route:
    edge_ids: tuple[str, ...]
    polyline: Trajectory
    length: float
    edges: tuple[int, ...] = ()


class RoadNetwork:
    """Directed road graph with edge geometries.

    Treated as immutable once built; all queries are read-only.
    """

    def __init__(self, nodes: dict[str, GeoPoint], edges: Sequence[Edge]):
        self.nodes = dict(nodes)
        self.edges = list(edges)
        self.node_ids = sorted(self.nodes, key=natural_key)
        self.node_index = {nid: i for i, nid in enumerate(self.node_ids)}
        self._src = np.array([self.node_index[e.source] for e in self.edges], dtype=np.int64)
        self._dst = np.array([self.node_index[e.target] for e in self.edges], dtype=np.int64)
        self._len = np.array([e.length for e in self.edges], dtype=float)
        out: list[list[int]] = [[] for _ in self.node_ids]
        for i, e in enumerate(self.edges):
            out[self.node_index[e.source]].append(i)
        # deterministic relaxation order: by target rank, then edge id
        for lst in out:
            lst.sort(key=lambda i: (self._dst[i], natural_key(self.edges[i].edge_id), not self.edges[i].forward))
        self.out_edges = out
        self._edge_key = [natural_key(e.edge_id) for e in self.edges]

    @classmethod
    def from_records(
        cls,
        nodes: dict[str, Sequence[float]],
        edges: Iterable[tuple[str, str, str, bool, Sequence[Sequence[float]] | None]],
    ) -> "RoadNetwork":
        """Build from plain records ``(edge_id, from, to, oneway, geometry)``.

        ``geometry`` may be None for a straight edge between its end nodes.
        """
        pts = {str(k): GeoPoint(float(v[0]), float(v[1])) for k, v in nodes.items()}
        directed: list[Edge] = []
        dangling: list[str] = []
        for edge_id, a, b, oneway, geom in edges:
            edge_id, a, b = str(edge_id), str(a), str(b)
            if a not in pts or b not in pts:
                dangling.append(edge_id)
                continue
            g = np.array(geom if geom is not None else [pts[a], pts[b]], dtype=float)
            g.setflags(write=False)
            length = float(np.sum(segment_lengths(g)))
            directed.append(Edge(edge_id, a, b, g, length, bool(oneway), True))
            if not oneway:
                r = g[::-1].copy()
                r.setflags(write=False)
                directed.append(Edge(edge_id, b, a, r, length, False, False))
        if dangling:
            raise DanglingReferenceError(dangling)
        return cls(pts, directed)

    def __len__(self) -> int:
        return len(self.edges)

    # -- geometry caches ------------------------------------------------------

    @cached_property
    def _origin(self) -> tuple[float, float]:
        arr = np.array(list(self.nodes.values()))
        return float(arr[:, 0].mean()), float(arr[:, 1].mean())

    @cached_property
    def _edge_xy(self) -> list[np.ndarray]:
        lon0, lat0 = self._origin
        return [project(e.geometry, lon0, lat0) for e in self.edges]

    @cached_property
    def _edge_cum(self) -> list[np.ndarray]:
        """Cumulative great-circle length at each vertex of each edge."""
        return [np.concatenate([[0.0], np.cumsum(segment_lengths(e.geometry))]) for e in self.edges]

    @cached_property
    def _index(self) -> dict[tuple[int, int], list[tuple[int, int]]]:
        buckets: dict[tuple[int, int], list[tuple[int, int]]] = {}
        for ei, xy in enumerate(self._edge_xy):
            for si in range(len(xy) - 1):
                (x0, y0), (x1, y1) = xy[si], xy[si + 1]
                for bx in range(math.floor(min(x0, x1) / INDEX_CELL_M), math.floor(max(x0, x1) / INDEX_CELL_M) + 1):
                    for by in range(math.floor(min(y0, y1) / INDEX_CELL_M), math.floor(max(y0, y1) / INDEX_CELL_M) + 1):
                        buckets.setdefault((bx, by), []).append((ei, si))
        return buckets

    @cached_property
    def graph(self):
        """Sparse node adjacency weighted by the shortest parallel edge length."""
        best: dict[tuple[int, int], float] = {}
        for u, v, w in zip(self._src.tolist(), self._dst.tolist(), self._len.tolist()):
            if u != v and w < best.get((u, v), math.inf):
                best[(u, v)] = w
        n = len(self.node_ids)
        if not best:
            return csr_matrix((n, n))
        (rows, cols), vals = zip(*best.keys()), list(best.values())
        # zero-length edges would vanish from a sparse matrix
        vals = [max(w, 1e-9) for w in vals]
        return csr_matrix((vals, (rows, cols)), shape=(n, n))

    # -- geometry helpers -----------------------------------------------------

    def point_at(self, edge: int, offset: float) -> GeoPoint:
        g = self.edges[edge].geometry
        cum = self._edge_cum[edge]
        offset = min(max(offset, 0.0), cum[-1])
        si = int(np.searchsorted(cum, offset, side="right") - 1)
        si = min(si, len(g) - 2)
        seg = cum[si + 1] - cum[si]
        f = 0.0 if seg <= 0 else (offset - cum[si]) / seg
        p = g[si] + f * (g[si + 1] - g[si])
        return GeoPoint(float(p[0]), float(p[1]))

    def sub_geometry(self, edge: int, start: float, end: float) -> np.ndarray:
        """Geometry of ``edge`` between two offsets (start <= end), endpoints interpolated."""
        g = self.edges[edge].geometry
        cum = self._edge_cum[edge]
        inner = g[(cum > start) & (cum < end)]
        return np.vstack([np.array(self.point_at(edge, start)), inner, np.array(self.point_at(edge, end))])


# ---------------------------------------------------------------------------
# loading and export


def _read_csv(path: Path, header: list[str]) -> list[tuple[int, list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                got = next(reader)
            except StopIteration:
                raise NetworkParseError("empty file", 1, str(path)) from None
            if [h.strip() for h in got] != header:
                raise NetworkParseError(f"expected header {','.join(header)}, got {','.join(got)}", 1, str(path))
            return [(reader.line_num, row) for row in reader if row]
    except UnicodeDecodeError as exc:
        raise NetworkParseError(f"not UTF-8: {exc}", None, str(path)) from exc


def load_network(nodes_file: str | Path, edges_file: str | Path) -> RoadNetwork:
    """Read a network from the nodes/edges CSV pair.

    Raises NetworkParseError (with line number) on malformed rows and
    DanglingReferenceError when edges name unknown nodes.
    """
    nodes: dict[str, tuple[float, float]] = {}
    for line, row in _read_csv(Path(nodes_file), ["node_id", "lon", "lat"]):
        if len(row) != 3:
            raise NetworkParseError(f"expected 3 fields, got {len(row)}", line, str(nodes_file))
        try:
            lon, lat = float(row[1]), float(row[2])
            check_coords(np.array([[lon, lat]]))
        except ValueError as exc:
            raise NetworkParseError(f"bad coordinate: {exc}", line, str(nodes_file)) from None
        if row[0] in nodes:
            raise NetworkParseError(f"duplicate node_id {row[0]!r}", line, str(nodes_file))
        nodes[row[0]] = (lon, lat)

    records = []
    seen: set[str] = set()
    for line, row in _read_csv(Path(edges_file), ["edge_id", "from_node", "to_node", "oneway", "geometry"]):
        if len(row) != 5:
            raise NetworkParseError(f"expected 5 fields, got {len(row)}", line, str(edges_file))
        edge_id, a, b, oneway, geom = row
        if edge_id in seen:
            raise NetworkParseError(f"duplicate edge_id {edge_id!r}", line, str(edges_file))
        seen.add(edge_id)
        if oneway not in ("0", "1"):
            raise NetworkParseError(f"oneway must be 0 or 1, got {oneway!r}", line, str(edges_file))
        parts = geom.split()
        try:
            vals = [float(v) for v in parts]
        except ValueError:
            raise NetworkParseError("geometry must be space-separated numbers", line, str(edges_file)) from None
        if len(vals) < 4 or len(vals) % 2:
            raise NetworkParseError("geometry needs at least two 'lon lat' pairs", line, str(edges_file))
        coords = np.array(vals).reshape(-1, 2)
        try:
            check_coords(coords)
        except ValueError as exc:
            raise NetworkParseError(str(exc), line, str(edges_file)) from None
        records.append((edge_id, a, b, oneway == "1", coords))
    return RoadNetwork.from_records(nodes, records)


def write_network(net: RoadNetwork, nodes_file: str | Path, edges_file: str | Path) -> None:
    with open(nodes_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "lon", "lat"])
        for nid in net.node_ids:
            p = net.nodes[nid]
            w.writerow([nid, repr(float(p.lon)), repr(float(p.lat))])
    with open(edges_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["edge_id", "from_node", "to_node", "oneway", "geometry"])
        for e in net.edges:
            if not e.forward:
                continue
            geom = " ".join(f"{float(x)!r} {float(y)!r}" for x, y in e.geometry)
            w.writerow([e.edge_id, e.source, e.target, int(e.oneway), geom])


def routes_geojson(routes: Iterable[Route]) -> dict:
    features = []
    for r in routes:
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": r.polyline.coords.tolist()},
                "properties": {"trip_id": r.polyline.id, "length_m": r.length},
            }
        )
    return {"type": "FeatureCollection", "features": features}


def write_routes_geojson(routes: Iterable[Route], path: str | Path) -> None:
    Path(path).write_text(json.dumps(routes_geojson(routes)), encoding="utf-8")


# ---------------------------------------------------------------------------
# candidates


def nearest_edge_candidates(net: RoadNetwork, p: Sequence[float], radius: float) -> list[Candidate]:
    """All directed edges within ``radius`` meters of ``p``, nearest first.

    Ties in distance are broken by edge id, forward direction first.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    lon0, lat0 = net._origin
    x, y = project(np.array([p[0], p[1]], dtype=float), lon0, lat0)
    idx = net._index
    hits: set[tuple[int, int]] = set()
    for bx in range(math.floor((x - radius) / INDEX_CELL_M), math.floor((x + radius) / INDEX_CELL_M) + 1):
        for by in range(math.floor((y - radius) / INDEX_CELL_M), math.floor((y + radius) / INDEX_CELL_M) + 1):
            hits.update(idx.get((bx, by), ()))
    best: dict[int, tuple[float, int, float]] = {}
    for ei, si in hits:
        xy = net._edge_xy[ei]
        (x0, y0), (x1, y1) = xy[si], xy[si + 1]
        dx, dy = x1 - x0, y1 - y0
        den = dx * dx + dy * dy
        f = 0.0 if den == 0 else min(1.0, max(0.0, ((x - x0) * dx + (y - y0) * dy) / den))
        d = math.hypot(x0 + f * dx - x, y0 + f * dy - y)
        if d <= radius:
            cur = best.get(ei)
            if cur is None or (d, si) < (cur[0], cur[1]):
                best[ei] = (d, si, f)
    out = []
    for ei, (d, si, f) in best.items():
        cum = net._edge_cum[ei]
        offset = float(cum[si] + f * (cum[si + 1] - cum[si]))
        g = net.edges[ei].geometry
        pt = g[si] + f * (g[si + 1] - g[si])
        out.append(Candidate(ei, net.edges[ei].edge_id, GeoPoint(float(pt[0]), float(pt[1])), offset, d))
    out.sort(key=lambda c: (round(c.distance, 6), net._edge_key[c.edge], not net.edges[c.edge].forward))
    return out


# ---------------------------------------------------------------------------
# routing


def dijkstra(
    net: RoadNetwork, source: int, limit: float = math.inf, targets: Iterable[int] | None = None
) -> tuple[dict[int, float], dict[int, int]]:
    """Single-source shortest distances over node indices.

    Returns (dist, pred_edge).  Nodes beyond ``limit`` are not explored; the
    search stops early once every node in ``targets`` is settled.  Among equal
    alternatives the predecessor with the smaller node id wins.
    """
    dist = {source: 0.0}
    pred: dict[int, int] = {}
    remaining = set(targets) if targets is not None else None
    settled: set[int] = set()
    heap = [(0.0, source)]
    src, dst, ln = net._src, net._dst, net._len
    while heap:
        d, u = heapq.heappop(heap)
        if u in settled:
            continue
        settled.add(u)
        if remaining is not None:
            remaining.discard(u)
            if not remaining:
                break
        for ei in net.out_edges[u]:
            v = int(dst[ei])
            if v in settled:
                continue
            nd = d + ln[ei]
            if nd > limit:
                continue
            old = dist.get(v)
            if old is None or nd < old or (nd == old and u < src[pred[v]]):
                dist[v] = nd
                pred[v] = ei
                heapq.heappush(heap, (nd, v))
    return dist, pred


def _edge_path(net: RoadNetwork, pred: dict[int, int], source: int, target: int) -> list[int]:
    path = []
    v = target
    while v != source:
        ei = pred[v]
        path.append(ei)
        v = int(net._src[ei])
    path.reverse()
    return path


def _assemble(net: RoadNetwork, pieces: list[tuple[int, float, float]], trip_id: str, variant: Variant) -> Route:
    """Turn (edge, from_offset, to_offset) pieces into a Route."""
    parts = []
    edges: list[int] = []
    for ei, a, b in pieces:
        geom = net.sub_geometry(ei, a, b)
        if parts and np.array_equal(parts[-1][-1], geom[0]):
            geom = geom[1:]
        parts.append(geom)
        if b - a > 1e-6 and (not edges or edges[-1] != ei):
            edges.append(ei)
    coords = np.vstack(parts)
    if len(coords) == 1:
        coords = np.vstack([coords, coords])
    poly = Trajectory(trip_id, coords, variant)
    return Route(tuple(net.edges[e].edge_id for e in edges), poly, path_length(poly), tuple(edges))


def shortest_path(net: RoadNetwork, source: str, target: str) -> Route:
    """Minimum-length directed path between two nodes."""
    for nid in (source, target):
        if nid not in net.node_index:
            raise KeyError(f"unknown node {nid!r}")
    s, t = net.node_index[source], net.node_index[target]
    if s == t:
        p = net.nodes[source]
        poly = Trajectory(f"{source}->{target}", [p, p], Variant.ROUTED)
        return Route((), poly, 0.0, ())
    _, pred = dijkstra(net, s, targets=[t])
    if t not in pred:
        raise NoRouteError(f"no route from {source!r} to {target!r}")
    path = _edge_path(net, pred, s, t)
    pieces = [(ei, 0.0, net._len[ei]) for ei in path]
    return _assemble(net, pieces, f"{source}->{target}", Variant.ROUTED)


def candidate_route(
    net: RoadNetwork, a: Candidate, b: Candidate, limit: float = math.inf
) -> tuple[float, list[tuple[int, float, float]]] | None:
    """Shortest connection from candidate ``a`` to candidate ``b`` as pieces, or None."""
    if a.edge == b.edge and b.offset >= a.offset:
        return b.offset - a.offset, [(a.edge, a.offset, b.offset)]
    head = net._len[a.edge] - a.offset
    u, v = int(net._dst[a.edge]), int(net._src[b.edge])
    dist, pred = dijkstra(net, u, limit=limit, targets=[v])
    if v not in dist:
        return None
    pieces = [(a.edge, a.offset, float(net._len[a.edge]))]
    pieces += [(ei, 0.0, float(net._len[ei])) for ei in _edge_path(net, pred, u, v)]
    pieces.append((b.edge, 0.0, b.offset))
    return head + dist[v] + b.offset, pieces


def _snap(net: RoadNetwork, p: Sequence[float], radius: float) -> list[Candidate]:
    cands = nearest_edge_candidates(net, p, radius)
    if not cands:
        return []
    dmin = cands[0].distance
    return [c for c in cands if c.distance - dmin <= 1e-6]


def route_od(net: RoadNetwork, t: Trajectory, snap_radius: float) -> Route:
    """Shortest network route between the projected first and last points of ``t``.

    Both endpoints are projected onto their nearest edge (both directions of a
    two-way edge are tried).  Raises RoutingFailedError when an endpoint has no
    edge within ``snap_radius`` or the projections are disconnected.
    """
    origins = _snap(net, t.coords[0], snap_radius)
    dests = _snap(net, t.coords[-1], snap_radius)
    if not origins or not dests:
        raise RoutingFailedError(f"trip {t.id!r}: endpoint not within {snap_radius} m of the network")
    searches: dict[int, tuple[dict[int, float], dict[int, int]]] = {}
    targets = {int(net._src[b.edge]) for b in dests}
    best = None
    for a in origins:
        u = int(net._dst[a.edge])
        if u not in searches:
            searches[u] = dijkstra(net, u, targets=targets)
        dist, pred = searches[u]
        head = float(net._len[a.edge]) - a.offset
        for b in dests:
            if a.edge == b.edge and b.offset >= a.offset:
                cand = (b.offset - a.offset, [(a.edge, a.offset, b.offset)])
            else:
                v = int(net._src[b.edge])
                if v not in dist:
                    continue
                pieces = [(a.edge, a.offset, float(net._len[a.edge]))]
                pieces += [(ei, 0.0, float(net._len[ei])) for ei in _edge_path(net, pred, u, v)]
                pieces.append((b.edge, 0.0, b.offset))
                cand = (head + dist[v] + b.offset, pieces)
            if best is None or cand[0] < best[0]:
                best = cand
    if best is None:
        raise RoutingFailedError(f"trip {t.id!r}: no route between snapped endpoints")
    return _assemble(net, best[1], t.id, Variant.ROUTED)


def _route_one(shared, t: Trajectory) -> Route | None:
    net, snap_radius = shared
    try:
        return route_od(net, t, snap_radius)
    except RoutingFailedError:
        return None


def route_dataset(
    net: RoadNetwork, ds: Sequence[Trajectory], snap_radius: float, workers: int | None = None
) -> tuple[list[Route], list[str]]:
    """Route every trip; returns (routes, ids of failed trips), both in input order."""
    results = pmap(_route_one, ds, shared=(net, snap_radius), workers=workers)
    routes = [r for r in results if r is not None]
    failed = [t.id for t, r in zip(ds, results) if r is None]
    return routes, failed


def network_bbox(net: RoadNetwork, margin_m: float = 0.0) -> BBox:
    """Bounding box of all nodes, widened by ``margin_m`` on every side."""
    arr = np.array(list(net.nodes.values()))
    lat0 = float(arr[:, 1].mean())
    dlat = margin_m / M_PER_DEG
    dlon = margin_m / (M_PER_DEG * math.cos(math.radians(lat0)))
    return BBox(arr[:, 0].min() - dlon, arr[:, 1].min() - dlat, arr[:, 0].max() + dlon, arr[:, 1].max() + dlat)
