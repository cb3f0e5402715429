"""Hidden-Markov map matching and the matching-quality checks run on each dataset.

The model follows Newson & Krumm (2009): candidate road positions per GPS
point, Gaussian emission on the perpendicular distance, and an exponential
transition on the difference between great-circle and network distance,
decoded with Viterbi.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.sparse import csgraph

from .geo import Trajectory, Variant, hausdorff, haversine, path_length, segment_lengths
from .network import Candidate, RoadNetwork, _assemble, _edge_path, dijkstra, nearest_edge_candidates
from .parallel import pmap

MAX_CANDIDATES = 16
SHORTER_FRACTION = 0.9


class MatchStatus(str, Enum):
    OK = "ok"
    PARTLY_FAILED = "partly_failed"
    FAILED = "failed"


@dataclass(frozen=True)
class MatchResult:
    trip_id: str
    status: MatchStatus
    matched: Trajectory | None
    matched_edges: tuple[str, ...]
    hausdorff_to_original: float
    n_runs: int = 0

    @property
    def broken(self) -> bool:
        """True when the trace split into several matchable runs."""
        return self.n_runs > 1


@dataclass(frozen=True)
class MatchReport:
    n_trips: int
    pct_failed: float
    pct_shorter: float
    median_hausdorff: float
    n_broken: int = 0
    # gaps in a trace are resolved by keeping the longest matched run
    gap_policy: str = "longest_run"

    def to_dict(self) -> dict:
        d = asdict(self)
        if not math.isfinite(d["median_hausdorff"]):
            d["median_hausdorff"] = None
        return d


class _Router:
    """Per-trace cache of bounded shortest-distance rows keyed by start node."""

    def __init__(self, net: RoadNetwork):
        self.net = net
        self._rows: dict[int, tuple[float, np.ndarray]] = {}

    def distances(self, nodes: Sequence[int], limit: float) -> dict[int, np.ndarray]:
        need = sorted({n for n in nodes if n not in self._rows or self._rows[n][0] < limit})
        if need:
            rows = csgraph.dijkstra(self.net.graph, directed=True, indices=need, limit=limit)
            for n, row in zip(need, np.atleast_2d(rows)):
                self._rows[n] = (limit, row)
        return {n: self._rows[n][1] for n in nodes}


def _transition_distances(router: _Router, prev: list[Candidate], nxt: list[Candidate], limit: float, tol: float) -> np.ndarray:
    net = router.net
    out = np.full((len(prev), len(nxt)), np.inf)
    rows = router.distances([int(net._dst[a.edge]) for a in prev], limit)
    starts = np.array([int(net._src[b.edge]) for b in nxt])
    offsets = np.array([b.offset for b in nxt])
    for ia, a in enumerate(prev):
        head = net._len[a.edge] - a.offset
        out[ia] = head + rows[int(net._dst[a.edge])][starts] + offsets
        for ib, b in enumerate(nxt):
            if a.edge == b.edge:
                if b.offset >= a.offset:
                    out[ia, ib] = b.offset - a.offset
                elif a.offset - b.offset <= tol:
                    # GPS jitter backwards along the same edge
                    out[ia, ib] = 0.0
    return out


def _decode_runs(net: RoadNetwork, coords: np.ndarray, radius: float, router: _Router):
    """Viterbi over the trace; returns a list of runs, each a list of (point_index, Candidate)."""
    search = 3.0 * radius
    beta = radius
    tol = radius
    runs: list[list[tuple[int, Candidate]]] = []
    steps: list[tuple[int, list[Candidate], np.ndarray]] = []  # (index, candidates, backpointers)
    scores: np.ndarray | None = None

    def close():
        nonlocal steps, scores
        if steps:
            k = int(np.argmax(scores))
            seq = []
            for idx, cands, back in reversed(steps):
                seq.append((idx, cands[k]))
                k = int(back[k]) if back is not None else -1
            seq.reverse()
            runs.append(seq)
        steps, scores = [], None

    for i, p in enumerate(coords):
        cands = nearest_edge_candidates(net, p, search)[:MAX_CANDIDATES]
        if not cands:
            close()
            continue
        emission = np.array([-0.5 * (c.distance / radius) ** 2 for c in cands])
        if scores is None:
            steps.append((i, cands, None))
            scores = emission
            continue
        gc = haversine(coords[i - 1], p)
        limit = 2.0 * gc + 2.0 * search
        route = _transition_distances(router, steps[-1][1], cands, limit, tol)
        trans = np.where(np.isfinite(route), -np.abs(gc - route) / beta, -np.inf)
        total = scores[:, None] + trans
        back = np.argmax(total, axis=0)
        best = total[back, np.arange(len(cands))]
        if not np.any(np.isfinite(best)):
            close()
            steps.append((i, cands, None))
            scores = emission
            continue
        steps.append((i, cands, back))
        scores = best + emission
    close()
    return runs


def _run_pieces(router: _Router, seq: list[tuple[int, Candidate]], tol: float):
    net = router.net
    first = seq[0][1]
    pieces: list[tuple[int, float, float]] = []
    edge, off = first.edge, first.offset
    for _, c in seq[1:]:
        if c.edge == edge and c.offset >= off:
            pieces.append((edge, off, c.offset))
            off = c.offset
            continue
        if c.edge == edge and off - c.offset <= tol:
            continue
        u, v = int(net._dst[edge]), int(net._src[c.edge])
        head = float(net._len[edge])
        _, pred = dijkstra(net, u, targets=[v])
        pieces.append((edge, off, head))
        pieces += [(ei, 0.0, float(net._len[ei])) for ei in _edge_path(net, pred, u, v)]
        edge, off = c.edge, c.offset
        pieces.append((edge, 0.0, off))
    return pieces


def match_trace(net: RoadNetwork, t: Trajectory, radius: float) -> MatchResult:
    """Map-match one trajectory.

    ``radius`` is the assumed GPS precision in meters: candidates are searched
    within 3 * radius, and it scales both emission and transition terms.
    When points without candidates (or unreachable transitions) break the
    trace, the longest matched run is returned.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    router = _Router(net)
    runs = _decode_runs(net, t.coords, radius, router)
    if not runs:
        return MatchResult(t.id, MatchStatus.FAILED, None, (), math.nan, 0)
    best = None
    for seq in runs:
        pieces = _run_pieces(router, seq, radius)
        if pieces:
            route = _assemble(net, pieces, t.id, Variant.MATCHED)
        else:
            c = seq[0][1]
            route = _assemble(net, [(c.edge, c.offset, c.offset)], t.id, Variant.MATCHED)
        key = (route.length, len(seq))
        if best is None or key > best[0]:
            best = (key, route)
    route = best[1]
    original = path_length(t)
    status = MatchStatus.PARTLY_FAILED if route.length < SHORTER_FRACTION * original else MatchStatus.OK
    hd = hausdorff(route.polyline, t)
    return MatchResult(t.id, status, route.polyline, route.edge_ids, hd, len(runs))


def _match_one(shared, t):
    net, radius = shared
    return match_trace(net, t, radius)


def summarize(results: Sequence[MatchResult]) -> MatchReport:
    n = len(results)
    failed = sum(r.status is MatchStatus.FAILED for r in results)
    shorter = sum(r.status is MatchStatus.PARTLY_FAILED for r in results)
    hds = sorted(r.hausdorff_to_original for r in results if r.status is not MatchStatus.FAILED)
    med = float(np.median(hds)) if hds else math.nan
    return MatchReport(
        n_trips=n,
        pct_failed=100.0 * failed / n if n else 0.0,
        pct_shorter=100.0 * shorter / n if n else 0.0,
        median_hausdorff=med,
        n_broken=sum(r.broken for r in results),
    )


def match_dataset(
    net: RoadNetwork, ds: Sequence[Trajectory], radius: float, workers: int | None = None
) -> tuple[list[MatchResult], MatchReport]:
    """Match every trip; results keep input order regardless of ``workers``."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    results = pmap(_match_one, ds, shared=(net, radius), workers=workers)
    return results, summarize(results)


# ---------------------------------------------------------------------------
# matchability


@dataclass(frozen=True)
class GateResult:
    """Distribution of consecutive-point distances and the resulting verdict.

    ``passed`` is None when no trip has two distinct points.
    """

    n_distances: int
    quantiles: dict[str, float]
    cell_size_m: float
    passed: bool | None

    @property
    def median(self) -> float:
        return self.quantiles.get("median", math.nan)

    def to_dict(self) -> dict:
        return {
            "n_distances": self.n_distances,
            "quantiles": {k: (v if math.isfinite(v) else None) for k, v in self.quantiles.items()},
            "cell_size_m": self.cell_size_m,
            "passed": self.passed,
        }


def consecutive_distances(ds: Sequence[Trajectory]) -> np.ndarray:
    """Distances between consecutive points, identical repeats excluded."""
    parts = []
    for t in ds:
        c = t.coords
        moved = np.any(c[1:] != c[:-1], axis=1)
        if np.any(moved):
            parts.append(segment_lengths(c)[moved])
    return np.concatenate(parts) if parts else np.array([])


def matchability_gate(ds: Sequence[Trajectory], cell_size_m: float) -> GateResult:
    """Pass iff the median consecutive distance is at most twice the generation cell size."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    d = consecutive_distances(ds)
    names = ["min", "25%", "median", "75%", "max"]
    if len(d) == 0:
        return GateResult(0, {k: math.nan for k in names}, cell_size_m, None)
    q = np.percentile(d, [0, 25, 50, 75, 100])
    quant = {k: float(v) for k, v in zip(names, q)}
    return GateResult(len(d), quant, cell_size_m, bool(quant["median"] <= 2.0 * cell_size_m))
