"""Independent reference implementations used as test oracles."""

import itertools
import math

import numpy as np


def event_cells(u0, v0, u1, v1, n_cols, n_rows):
    """Oracle: split the segment at every grid-line crossing and locate each piece's midpoint."""
    ts = {0.0, 1.0}
    for p0, p1 in ((u0, u1), (v0, v1)):
        if p0 != p1:
            lo, hi = sorted((p0, p1))
            for k in range(math.ceil(lo), math.floor(hi) + 1):
                t = (k - p0) / (p1 - p0)
                if 0 < t < 1:
                    ts.add(t)
    ts = sorted(ts)
    out = []
    for ta, tb in zip(ts[:-1], ts[1:]):
        tm = (ta + tb) / 2
        u, v = u0 + tm * (u1 - u0), v0 + tm * (v1 - v0)
        c = (min(int(math.floor(u)), n_cols - 1), min(int(math.floor(v)), n_rows - 1))
        if not out or out[-1] != c:
            out.append(c)
    if not out:
        out = [(min(int(math.floor(u0)), n_cols - 1), min(int(math.floor(v0)), n_rows - 1))]
    return out


def trip_cells_oracle(grid, coords):
    """Cells touched by a polyline, via the event-splitting oracle on each segment."""
    uv = grid.to_units(np.asarray(coords, float))
    out = set()
    for (u0, v0), (u1, v1) in zip(uv[:-1], uv[1:]):
        for c, r in event_cells(u0, v0, u1, v1, grid.n_cols, grid.n_rows):
            out.add(r * grid.n_cols + c)
    return out


def dcg_brute(rels, k):
    return sum(r / math.log2(i + 2) for i, r in enumerate(rels[:k]))


def best_assignment(dist, threshold):
    """Assignment maximising the number of matched pairs within ``threshold``, then minimising total distance."""
    n_raw, n_syn = dist.shape
    best = None
    for perm in itertools.permutations(range(max(n_syn, n_raw)), n_raw):
        pairs = [(i, j) for i, j in enumerate(perm) if j < n_syn and dist[i, j] <= threshold]
        key = (-len(pairs), sum(dist[i, j] for i, j in pairs))
        if best is None or key < best[0]:
            best = (key, pairs)
    return best[1]


# (matched waypoints, routed waypoints) on the block grid
DETOURS = [
    ([(2, 2), (2, 4), (6, 4), (6, 2)], [(2, 2), (6, 2)]),
    ([(2, 2), (2, 4), (6, 4), (6, 2)], [(2, 2), (6, 2)]),
    ([(2, 2), (2, 0), (6, 0), (6, 2)], [(2, 2), (6, 2)]),
    ([(10, 5), (10, 12)], [(10, 5), (10, 12)]),
    ([(10, 5), (12, 5), (12, 12), (10, 12)], [(10, 5), (10, 12)]),
    ([(1, 10), (8, 10)], [(1, 10), (8, 10)]),
    ([(1, 10), (1, 11), (8, 11), (8, 10)], [(1, 10), (8, 10)]),
    ([(15, 15), (18, 15), (18, 18)], [(15, 15), (15, 18), (18, 18)]),
    ([(15, 15), (15, 18), (18, 18)], [(15, 15), (18, 15), (18, 18)]),
    ([(4, 16), (4, 19), (7, 19)], [(4, 16), (7, 16), (7, 19)]),
]


def set_difference_oracle(grid, matched, routed):
    npref, navoid, n = {}, {}, {}
    for m, r in zip(matched, routed):
        cm, cr = trip_cells_oracle(grid, m.coords), trip_cells_oracle(grid, r.coords)
        for c in cm - cr:
            npref[c] = npref.get(c, 0) + 1
        for c in cr - cm:
            navoid[c] = navoid.get(c, 0) + 1
        for c in cm | cr:
            n[c] = n.get(c, 0) + 1
    return npref, navoid, n
