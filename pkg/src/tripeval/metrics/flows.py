"""Movement patterns at intersections: clustering of trip fragments and ranking quality."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial import cKDTree
from scipy.spatial.distance import squareform

from ..errors import UndefinedMetricError
from ..geo import BBox, Trajectory, project, resample_xy
from ..parallel import pmap

N_REPRESENTATIVES = 3


@dataclass(frozen=True)
class FlowCluster:
    members: tuple[int, ...]
    representatives: tuple[Trajectory, ...]

    @property
    def count(self) -> int:
        return len(self.members)

    @property
    def label(self) -> str:
        return self.representatives[0].id


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple[FlowCluster, ...]
    bbox: BBox | None = None
    cutoff: float = 5.0

    @property
    def n_fragments(self) -> int:
        return sum(c.count for c in self.clusters)


def _anchor(frags: Sequence[Trajectory]) -> tuple[float, float]:
    allc = np.vstack([f.coords for f in frags])
    return float(allc[:, 0].mean()), float(allc[:, 1].mean())


class _Shapes:
    """Densified planar copies of fragments with KD-trees, sharing one projection anchor."""

    def __init__(self, frags: Sequence[Trajectory], anchor: tuple[float, float]):
        self.pts = [resample_xy(project(f.coords, *anchor), 1.0) for f in frags]
        self.trees = [cKDTree(p) for p in self.pts]
        self.box = np.array([[p[:, 0].min(), p[:, 1].min(), p[:, 0].max(), p[:, 1].max()] for p in self.pts])

    def hd(self, i: int, j: int, other: "_Shapes | None" = None) -> float:
        o = other or self
        a = self.trees[i].query(o.pts[j])[0].max()
        b = o.trees[j].query(self.pts[i])[0].max()
        return float(max(a, b))


def _row(shared, i: int) -> np.ndarray:
    shapes, cap = shared
    n = len(shapes.pts)
    # any point set's Hausdorff distance is at least the largest gap between bounding-box sides
    lower = np.abs(shapes.box[i + 1 :] - shapes.box[i]).max(axis=1) if i + 1 < n else np.zeros(0)
    out = lower.copy()
    for k in np.flatnonzero(lower <= cap):
        out[k] = shapes.hd(i, i + 1 + int(k))
    return out


def hausdorff_matrix(frags: Sequence[Trajectory], cap: float = math.inf, workers: int | None = None) -> np.ndarray:
    """Symmetric matrix of pairwise Hausdorff distances in meters.

    Entries above ``cap`` may hold a lower bound (still above ``cap``)
    instead of the exact distance.  Identical geometries are computed once.
    """
    keys: dict[bytes, int] = {}
    inverse = np.empty(len(frags), dtype=int)
    uniq: list[Trajectory] = []
    for i, f in enumerate(frags):
        k = np.ascontiguousarray(f.coords).tobytes()
        if k not in keys:
            keys[k] = len(uniq)
            uniq.append(f)
        inverse[i] = keys[k]
    shapes = _Shapes(uniq, _anchor(uniq))
    n = len(uniq)
    rows = pmap(_row, range(n), shared=(shapes, cap), workers=workers)
    d = np.zeros((n, n))
    for i, r in enumerate(rows):
        d[i, i + 1 :] = r
        d[i + 1 :, i] = r
    return d[np.ix_(inverse, inverse)]


def cluster_flows(
    fragments: Sequence[Trajectory], cutoff: float = 5.0, bbox: BBox | None = None, workers: int | None = None
) -> ClusterSet:
    """Complete-linkage clustering of fragments under Hausdorff distance, cut at ``cutoff`` meters.

    Clusters are ordered by their first member; representatives are the
    first three members in input order.
    """
    if len(fragments) == 0:
        raise ValueError("need at least one fragment")
    frags = list(fragments)
    if len(frags) == 1:
        return ClusterSet((FlowCluster((0,), (frags[0],)),), bbox, cutoff)
    # exact distances are only needed up to the cut height
    d = hausdorff_matrix(frags, cap=cutoff, workers=workers)
    z = linkage(squareform(d, checks=False), method="complete")
    labels = fcluster(z, t=cutoff, criterion="distance")
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    clusters = []
    for members in sorted(groups.values(), key=lambda m: m[0]):
        sub = d[np.ix_(members, members)]
        assert sub.max() <= cutoff, "complete linkage merged fragments beyond the cutoff"
        clusters.append(FlowCluster(tuple(members), tuple(frags[i] for i in members[:N_REPRESENTATIVES])))
    return ClusterSet(tuple(clusters), bbox, cutoff)


@dataclass(frozen=True)
class LinkedCluster:
    raw_index: int
    raw_label: str
    raw_count: int
    syn_index: int | None
    syn_count: int
    distance: float


def representative_distance(a: FlowCluster, b: FlowCluster) -> float:
    """Smallest Hausdorff distance over all representative pairs."""
    frags = list(a.representatives) + list(b.representatives)
    anchor = _anchor(frags)
    sa, sb = _Shapes(a.representatives, anchor), _Shapes(b.representatives, anchor)
    return min(sa.hd(i, j, sb) for i in range(len(a.representatives)) for j in range(len(b.representatives)))


def link_clusters(raw: ClusterSet, syn: ClusterSet, threshold: float = 5.0) -> list[LinkedCluster]:
    """Greedy one-to-one linking of raw clusters to synthetic ones.

    Raw clusters are visited by descending count (ties by label); each takes
    the closest still unlinked synthetic cluster if it lies within
    ``threshold``.
    """
    order = sorted(range(len(raw.clusters)), key=lambda i: (-raw.clusters[i].count, raw.clusters[i].label))
    dist = {}
    for i in order:
        for j in range(len(syn.clusters)):
            dist[i, j] = representative_distance(raw.clusters[i], syn.clusters[j])
    pool = set(range(len(syn.clusters)))
    out = []
    for i in order:
        rc = raw.clusters[i]
        best = min(pool, key=lambda j: (dist[i, j], j), default=None)
        if best is not None and dist[i, best] <= threshold:
            pool.remove(best)
            out.append(LinkedCluster(i, rc.label, rc.count, best, syn.clusters[best].count, dist[i, best]))
        else:
            d = dist[i, best] if best is not None else math.inf
            out.append(LinkedCluster(i, rc.label, rc.count, None, 0, d))
    return out


def dcg(relevances: Sequence[float], k: int) -> float:
    return float(sum(r / math.log2(i + 2) for i, r in enumerate(list(relevances)[:k])))


def ndcg_flows(matching: Sequence[LinkedCluster], k: int) -> float:
    """nDCG@k of the raw clusters ranked by their linked synthetic counts.

    Relevance is the raw count; ties in synthetic count are broken by raw
    count, then label.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if not matching or all(m.raw_count == 0 for m in matching):
        raise UndefinedMetricError("all raw counts are zero")
    predicted = sorted(matching, key=lambda m: (-m.syn_count, -m.raw_count, m.raw_label))
    ideal = sorted((m.raw_count for m in matching), reverse=True)
    return dcg([m.raw_count for m in predicted], k) / dcg(ideal, k)
