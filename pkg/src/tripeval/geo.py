"""Geometric primitives: points, trajectories, planar grids and polyline distances.

All planar math uses an equirectangular projection anchored at a reference
latitude, which is accurate to about 0.1% over city-sized extents.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial.distance import directed_hausdorff

from .errors import GridMismatchError, InvalidTrajectoryError, OutOfBoundsError

EARTH_RADIUS_M = 6_371_000.0
M_PER_DEG = EARTH_RADIUS_M * math.pi / 180.0


class GeoPoint(NamedTuple):
    lon: float
    lat: float


class Variant(str, Enum):
    ORIGINAL = "original"
    MATCHED = "matched"
    ROUTED = "routed"
    STRAIGHT_LINE = "straight_line"


def _as_coords(points) -> np.ndarray:
    arr = np.array(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidTrajectoryError(f"expected a sequence of (lon, lat) pairs, got shape {arr.shape}")
    return arr


def check_coords(arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise InvalidTrajectoryError("coordinates must be finite")
    if np.any(np.abs(arr[:, 0]) > 180.0) or np.any(np.abs(arr[:, 1]) > 90.0):
        raise InvalidTrajectoryError("coordinates outside WGS84 range")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """An ordered sequence of (lon, lat) points with a trip id.

    ``coords`` is stored as a read-only ``(n, 2)`` float array.
    """

    id: str
    coords: np.ndarray
    variant: Variant = Variant.ORIGINAL

    def __post_init__(self):
        arr = _as_coords(self.coords)
        if len(arr) < 2:
            raise InvalidTrajectoryError(f"trajectory {self.id!r} has {len(arr)} point(s); need at least 2")
        check_coords(arr)
        variant = Variant(self.variant)
        if variant is Variant.STRAIGHT_LINE and len(arr) != 2:
            raise InvalidTrajectoryError("straight-line trajectories have exactly 2 points")
        arr.setflags(write=False)
        object.__setattr__(self, "coords", arr)
        object.__setattr__(self, "variant", variant)
        object.__setattr__(self, "id", str(self.id))

    def __len__(self) -> int:
        return len(self.coords)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.id == other.id
            and self.variant == other.variant
            and self.coords.shape == other.coords.shape
            and bool(np.all(self.coords == other.coords))
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def points(self) -> list[GeoPoint]:
        return [GeoPoint(float(x), float(y)) for x, y in self.coords]

    @property
    def first(self) -> GeoPoint:
        return GeoPoint(float(self.coords[0, 0]), float(self.coords[0, 1]))

    @property
    def last(self) -> GeoPoint:
        return GeoPoint(float(self.coords[-1, 0]), float(self.coords[-1, 1]))

    def with_variant(self, variant: Variant | str) -> "Trajectory":
        return Trajectory(self.id, self.coords, Variant(variant))


# ---------------------------------------------------------------------------
# distances


def haversine_m(lon1, lat1, lon2, lat2):
    """Vectorised great-circle distance in meters."""
    lon1, lat1, lon2, lat2 = (np.radians(np.asarray(v, dtype=float)) for v in (lon1, lat1, lon2, lat2))
    a = np.sin((lat2 - lat1) / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def haversine(a: Sequence[float], b: Sequence[float]) -> float:
    """Great-circle distance in meters between two (lon, lat) points."""
    lon1, lat1, lon2, lat2 = map(math.radians, (a[0], a[1], b[0], b[1]))
    h = math.sin((lat2 - lat1) / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(min(1.0, h)))


def segment_lengths(coords: np.ndarray) -> np.ndarray:
    c = np.asarray(coords, dtype=float)
    return haversine_m(c[:-1, 0], c[:-1, 1], c[1:, 0], c[1:, 1])


def path_length(t: Trajectory | Sequence[Sequence[float]]) -> float:
    """Sum of great-circle distances between consecutive points, in meters."""
    coords = t.coords if isinstance(t, Trajectory) else _as_coords(t)
    if len(coords) < 2:
        raise InvalidTrajectoryError("path_length needs at least 2 points")
    return float(np.sum(segment_lengths(coords)))


def straight_line(t: Trajectory) -> Trajectory:
    """The 2-point origin/destination variant of ``t``."""
    return Trajectory(t.id, t.coords[[0, -1]], Variant.STRAIGHT_LINE)


def project(coords: np.ndarray, lon0: float, lat0: float) -> np.ndarray:
    """Equirectangular projection to meters around (lon0, lat0)."""
    c = np.asarray(coords, dtype=float)
    out = np.empty_like(c)
    out[..., 0] = (c[..., 0] - lon0) * M_PER_DEG * math.cos(math.radians(lat0))
    out[..., 1] = (c[..., 1] - lat0) * M_PER_DEG
    return out


def unproject(xy: np.ndarray, lon0: float, lat0: float) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    out = np.empty_like(xy)
    out[..., 0] = xy[..., 0] / (M_PER_DEG * math.cos(math.radians(lat0))) + lon0
    out[..., 1] = xy[..., 1] / M_PER_DEG + lat0
    return out


# ---------------------------------------------------------------------------
# bounding boxes and grids


@dataclass(frozen=True)
class BBox:
    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float

    def __post_init__(self):
        if not (self.min_lon < self.max_lon and self.min_lat < self.max_lat):
            raise ValueError(f"degenerate bbox {self.as_list()}")

    @classmethod
    def of(cls, values: Sequence[float]) -> "BBox":
        if len(values) != 4:
            raise ValueError("bbox needs 4 values: min_lon, min_lat, max_lon, max_lat")
        return cls(*(float(v) for v in values))

    def as_list(self) -> list[float]:
        return [self.min_lon, self.min_lat, self.max_lon, self.max_lat]

    @property
    def center(self) -> GeoPoint:
        return GeoPoint((self.min_lon + self.max_lon) / 2.0, (self.min_lat + self.max_lat) / 2.0)

    def contains(self, p: Sequence[float]) -> bool:
        return self.min_lon <= p[0] <= self.max_lon and self.min_lat <= p[1] <= self.max_lat

    def contains_all(self, coords: np.ndarray) -> bool:
        c = np.asarray(coords)
        return bool(
            np.all((c[:, 0] >= self.min_lon) & (c[:, 0] <= self.max_lon) & (c[:, 1] >= self.min_lat) & (c[:, 1] <= self.max_lat))
        )


@dataclass(frozen=True)
class Grid:
    """Square cells of ``cell_size_m`` over ``bbox``; ids are row-major from the southwest corner.

    Each axis uses half-open intervals ``[low, high)`` except that the bbox's
    max edge maps into the last cell, so every point in the bbox has exactly
    one cell.  The last row/column may extend past the bbox.
    """

    bbox: BBox
    cell_size_m: float
    n_cols: int = field(init=False)
    n_rows: int = field(init=False)

    def __post_init__(self):
        if self.cell_size_m <= 0:
            raise ValueError("cell_size_m must be positive")
        # tolerance keeps exact multiples from gaining a sliver column
        object.__setattr__(self, "n_cols", max(1, math.ceil(self.width_m / self.cell_size_m - 1e-9)))
        object.__setattr__(self, "n_rows", max(1, math.ceil(self.height_m / self.cell_size_m - 1e-9)))

    @property
    def lat0(self) -> float:
        return (self.bbox.min_lat + self.bbox.max_lat) / 2.0

    @property
    def m_per_deg_lon(self) -> float:
        return M_PER_DEG * math.cos(math.radians(self.lat0))

    @property
    def width_m(self) -> float:
        return (self.bbox.max_lon - self.bbox.min_lon) * self.m_per_deg_lon

    @property
    def height_m(self) -> float:
        return (self.bbox.max_lat - self.bbox.min_lat) * M_PER_DEG

    @property
    def n_cells(self) -> int:
        return self.n_cols * self.n_rows

    def to_units(self, coords: np.ndarray) -> np.ndarray:
        """Map (lon, lat) to continuous grid coordinates measured in cells."""
        c = np.asarray(coords, dtype=float)
        out = np.empty_like(c)
        out[..., 0] = (c[..., 0] - self.bbox.min_lon) * self.m_per_deg_lon / self.cell_size_m
        out[..., 1] = (c[..., 1] - self.bbox.min_lat) * M_PER_DEG / self.cell_size_m
        return out

    def from_units(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        out = np.empty_like(uv)
        out[..., 0] = uv[..., 0] * self.cell_size_m / self.m_per_deg_lon + self.bbox.min_lon
        out[..., 1] = uv[..., 1] * self.cell_size_m / M_PER_DEG + self.bbox.min_lat
        return out

    def col_row(self, cell_id: int) -> tuple[int, int]:
        if not 0 <= cell_id < self.n_cells:
            raise OutOfBoundsError(f"cell id {cell_id} outside grid of {self.n_cells} cells")
        return cell_id % self.n_cols, cell_id // self.n_cols

    def cell_id(self, col: int, row: int) -> int:
        return row * self.n_cols + col

    def neighbors(self, cell_id: int) -> list[int]:
        """8-neighbourhood of a cell in id order, clipped to the grid."""
        col, row = self.col_row(cell_id)
        out = []
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dc == 0 and dr == 0:
                    continue
                c, r = col + dc, row + dr
                if 0 <= c < self.n_cols and 0 <= r < self.n_rows:
                    out.append(r * self.n_cols + c)
        return out

    def cell_bounds(self, cell_id: int) -> BBox:
        """Footprint of a cell, clipped to the bbox."""
        col, row = self.col_row(cell_id)
        sw = self.from_units(np.array([col, row], dtype=float))
        ne = self.from_units(np.array([col + 1, row + 1], dtype=float))
        return BBox(sw[0], sw[1], min(ne[0], self.bbox.max_lon), min(ne[1], self.bbox.max_lat))


@dataclass
class CellHistogram:
    grid: Grid
    counts: dict[int, float]
    skipped: int = 0

    @property
    def total(self) -> float:
        return float(sum(self.counts.values()))


def _unit_cell(g: Grid, u: float, v: float) -> tuple[int, int]:
    col = min(int(math.floor(u)), g.n_cols - 1)
    row = min(int(math.floor(v)), g.n_rows - 1)
    return col, row


def cell_of(g: Grid, p: Sequence[float]) -> int:
    """Row-major id of the cell containing ``p``."""
    if not g.bbox.contains(p):
        raise OutOfBoundsError(f"point {tuple(p)} outside grid bbox")
    u, v = g.to_units(np.array([p[0], p[1]], dtype=float))
    col, row = _unit_cell(g, u, v)
    return row * g.n_cols + col


def cell_center(g: Grid, cell_id: int) -> GeoPoint:
    col, row = g.col_row(cell_id)
    lon, lat = g.from_units(np.array([col + 0.5, row + 0.5]))
    return GeoPoint(float(lon), float(lat))


# crossings this close in segment parameter count as passing through a corner
CORNER_EPS = 1e-9


def walk_cells(u0: float, v0: float, u1: float, v1: float, n_cols: int, n_rows: int) -> list[tuple[int, int]]:
    """Supercover walk from (u0, v0) to (u1, v1) in grid units.

    Returns (col, row) pairs in traversal order.  Where the segment passes
    exactly through a cell corner both side cells are emitted before the
    diagonal cell, so consecutive cells are always 4-adjacent.
    """
    u0, v0, u1, v1 = float(u0), float(v0), float(u1), float(v1)
    col = min(int(math.floor(u0)), n_cols - 1)
    row = min(int(math.floor(v0)), n_rows - 1)
    du, dv = u1 - u0, v1 - v0
    su = (du > 0) - (du < 0)
    sv = (dv > 0) - (dv < 0)
    out = [(col, row)]

    def t_cross(pos, p0, d, s):
        # next grid line in direction s; t computed fresh each step to avoid drift
        if s == 0:
            return math.inf
        line = pos + 1 if s > 0 else pos
        return (line - p0) / d

    def valid(t, s):
        # half-open cells: moving up we enter the next cell at the line itself,
        # moving down we only leave once strictly past it
        return t <= 1.0 if s > 0 else t < 1.0

    while True:
        tu = t_cross(col, u0, du, su)
        tv = t_cross(row, v0, dv, sv)
        step_u = su != 0 and valid(tu, su) and 0 <= col + su < n_cols
        step_v = sv != 0 and valid(tv, sv) and 0 <= row + sv < n_rows
        if step_u and step_v and abs(tu - tv) <= CORNER_EPS:
            out.append((col + su, row))
            out.append((col, row + sv))
            col, row = col + su, row + sv
        elif step_u and (not step_v or tu < tv):
            col += su
        elif step_v and (not step_u or tv < tu):
            row += sv
        else:
            break
        out.append((col, row))
    return out


def traverse_cells(g: Grid, a: Sequence[float], b: Sequence[float]) -> list[int]:
    """Ordered ids of all cells the segment a->b passes through."""
    if not (g.bbox.contains(a) and g.bbox.contains(b)):
        raise OutOfBoundsError("segment endpoint outside grid bbox")
    (u0, v0), (u1, v1) = g.to_units(np.array([a[:2], b[:2]], dtype=float))
    return [r * g.n_cols + c for c, r in walk_cells(u0, v0, u1, v1, g.n_cols, g.n_rows)]


def trip_cells(g: Grid, t: Trajectory) -> list[int]:
    """Distinct cells passed by a trajectory, in first-visit order."""
    if not g.bbox.contains_all(t.coords):
        raise OutOfBoundsError(f"trajectory {t.id!r} leaves the grid bbox")
    uv = g.to_units(t.coords)
    seen: dict[int, None] = {}
    for i in range(len(uv) - 1):
        u0, v0 = uv[i]
        u1, v1 = uv[i + 1]
        for c, r in walk_cells(u0, v0, u1, v1, g.n_cols, g.n_rows):
            seen.setdefault(r * g.n_cols + c)
    return list(seen)


def trip_cell_set(g: Grid, t: Trajectory, clip: bool = False) -> set[int]:
    """Cells passed by ``t``; with ``clip`` the parts outside the bbox are cut away first."""
    if not clip:
        return set(trip_cells(g, t))
    cells: set[int] = set()
    for frag in clip_to_bbox(t, g.bbox):
        cells.update(trip_cells(g, frag))
    return cells


def rasterize_dataset(g: Grid, ds: Sequence[Trajectory], clip: bool = False) -> CellHistogram:
    """Number of trips passing each cell (each trip counts a cell at most once).

    Trips leaving the bbox are skipped and counted in ``skipped`` unless
    ``clip`` is set, in which case only their inside parts are counted.
    """
    if len(ds) == 0:
        raise ValueError("cannot rasterize an empty dataset")
    counts: Counter[int] = Counter()
    skipped = 0
    for t in ds:
        try:
            cells = trip_cell_set(g, t, clip)
        except OutOfBoundsError:
            skipped += 1
            continue
        if not cells:
            skipped += 1
        counts.update(cells)
    return CellHistogram(g, dict(sorted(counts.items())), skipped)


def check_same_grid(a: Grid, b: Grid) -> None:
    if a != b:
        raise GridMismatchError("histograms are defined on different grids")


# ---------------------------------------------------------------------------
# Hausdorff distance


def resample_xy(xy: np.ndarray, step: float = 1.0) -> np.ndarray:
    """Densify a planar polyline so no gap exceeds ``step``; original vertices are kept."""
    xy = np.asarray(xy, dtype=float)
    if len(xy) == 1:
        return xy.copy()
    seg = xy[1:] - xy[:-1]
    lens = np.hypot(seg[:, 0], seg[:, 1])
    n = np.maximum(1, np.ceil(lens / step).astype(int))
    starts = np.repeat(xy[:-1], n, axis=0)
    segv = np.repeat(seg, n, axis=0)
    # fraction k/n for k = 0..n-1 within each segment
    offsets = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
    frac = offsets / np.repeat(n, n)
    pts = starts + segv * frac[:, None]
    return np.vstack([pts, xy[-1:]])


def _directed_hd(a: np.ndarray, b: np.ndarray) -> float:
    # exact; the fixed seed only affects the early-exit visiting order
    return float(directed_hausdorff(a, b, seed=0)[0])


def hausdorff(a: Trajectory | np.ndarray, b: Trajectory | np.ndarray, step: float = 1.0) -> float:
    """Symmetric discrete Hausdorff distance in meters between two polylines.

    Both polylines are densified to at most ``step`` meters between points.
    """
    ca = a.coords if isinstance(a, Trajectory) else np.asarray(a, dtype=float)
    cb = b.coords if isinstance(b, Trajectory) else np.asarray(b, dtype=float)
    # symmetric reference so hausdorff(a, b) == hausdorff(b, a) bit for bit
    lon0 = (ca[0, 0] + cb[0, 0]) / 2.0
    lat0 = (ca[0, 1] + cb[0, 1]) / 2.0
    pa = resample_xy(project(ca, lon0, lat0), step)
    pb = resample_xy(project(cb, lon0, lat0), step)
    return max(_directed_hd(pa, pb), _directed_hd(pb, pa))


# ---------------------------------------------------------------------------
# clipping


def _clip_segment(p0, p1, box: BBox) -> tuple[float, float] | None:
    """Liang-Barsky parameter interval of p0->p1 inside the closed box."""
    t0, t1 = 0.0, 1.0
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    for p, q in (
        (-dx, p0[0] - box.min_lon),
        (dx, box.max_lon - p0[0]),
        (-dy, p0[1] - box.min_lat),
        (dy, box.max_lat - p0[1]),
    ):
        if p == 0:
            if q < 0:
                return None
        else:
            r = q / p
            if p < 0:
                t0 = max(t0, r)
            else:
                t1 = min(t1, r)
    if t0 > t1:
        return None
    return t0, t1


def clip_to_bbox(t: Trajectory, box: BBox) -> list[Trajectory]:
    """Maximal pieces of ``t`` inside ``box``, with crossing points inserted.

    Fragments are named ``<id>#<k>``; a trajectory fully inside the box comes
    back unchanged.
    """
    c = t.coords
    if box.contains_all(c):
        return [t]
    fragments: list[list[tuple[float, float]]] = []
    current: list[tuple[float, float]] = []
    for i in range(len(c) - 1):
        p0, p1 = c[i], c[i + 1]
        iv = _clip_segment(p0, p1, box)
        if iv is None:
            if current:
                fragments.append(current)
                current = []
            continue
        ta, tb = iv
        a = (float(p0[0] + ta * (p1[0] - p0[0])), float(p0[1] + ta * (p1[1] - p0[1]))) if ta > 0 else (float(p0[0]), float(p0[1]))
        b = (float(p0[0] + tb * (p1[0] - p0[0])), float(p0[1] + tb * (p1[1] - p0[1]))) if tb < 1 else (float(p1[0]), float(p1[1]))
        if current and (ta > 0 or current[-1] != a):
            fragments.append(current)
            current = []
        if not current:
            current.append(a)
        current.append(b)
        if tb < 1:
            fragments.append(current)
            current = []
    if current:
        fragments.append(current)
    out = []
    for frag in fragments:
        arr = np.array(frag)
        if len(arr) >= 2 and np.any(arr != arr[0]):
            # endpoints on the boundary can drift outside by one ulp
            arr[:, 0] = np.clip(arr[:, 0], box.min_lon, box.max_lon)
            arr[:, 1] = np.clip(arr[:, 1], box.min_lat, box.max_lat)
            out.append(Trajectory(f"{t.id}#{len(out)}", arr, t.variant))
    return out
