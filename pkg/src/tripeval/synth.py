"""Grid-based differentially private trip synthesizers.

Two Markov models over a coarse top-level grid:

* ``first_dest_conditioned``: sample an OD pair, then a sequence length for
  that pair, then walk neighbour cells with transition probabilities
  conditioned on the current cell and the destination.
* ``second_virtual_end``: sample a start move, then walk with second-order
  transitions (previous, current) until an absorbing END state is drawn.

All counts are released through the Laplace mechanism.  Each trip contributes
at most 1 to every released table (transition weights are normalised per
trip), so ``sensitivity = 1`` is the per-trip L1 bound.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidBudgetError, OutOfBoundsError
from .geo import BBox, Grid, Trajectory, Variant, walk_cells
from .parallel import pmap

# neighbour moves in row-major order of the 3x3 neighbourhood (centre excluded)
DIRS = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]
END = 8
MAX_STEPS = 200
CHUNK = 1000


class ModelOrder(str, Enum):
    FIRST = "first_dest_conditioned"
    SECOND = "second_virtual_end"


class CoordMode(str, Enum):
    UNIFORM = "uniform_in_cell"
    CENTER = "cell_center"


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    sensitivity: float = 1.0

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise InvalidBudgetError(f"epsilon must be positive and finite, got {self.epsilon}")
        if not self.sensitivity > 0:
            raise InvalidBudgetError(f"sensitivity must be positive, got {self.sensitivity}")


class PrivacyAccountant:
    """Exact (rational) bookkeeping of epsilon spent under sequential composition."""

    def __init__(self, total: float):
        self.total = Fraction(total)
        self.entries: list[tuple[str, Fraction]] = []

    def spend(self, label: str, eps: Fraction) -> float:
        if eps <= 0:
            raise InvalidBudgetError(f"{label}: epsilon share must be positive")
        if self.consumed + eps > self.total:
            raise InvalidBudgetError(f"{label}: budget exceeded")
        self.entries.append((label, eps))
        return float(eps)

    @property
    def consumed(self) -> Fraction:
        return sum((e for _, e in self.entries), Fraction(0))

    def assert_exhausted(self) -> None:
        if self.consumed != self.total:
            raise AssertionError(f"privacy accounting mismatch: spent {self.consumed}, budget {self.total}")


def seed_parts(seed) -> list[int] | None:
    """Normalise an int or int sequence seed to a list (None stays None)."""
    if seed is None:
        return None
    if isinstance(seed, (list, tuple)):
        return [int(x) for x in seed]
    return [int(seed)]


def _stream(seed, *path: int):
    base = seed_parts(seed)
    return None if base is None else [*base, *path]


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def laplace_perturb(counts, eps: float, sensitivity: float = 1.0, rng_seed=None):
    """Add i.i.d. Laplace(0, sensitivity/eps) noise to every count.

    Accepts an array (returns a float array of the same shape) or a mapping
    (returns a dict with the same keys, in iteration order).  Negative results
    are kept; clamping is left to normalisation.
    """
    if not (eps > 0):
        raise InvalidBudgetError(f"epsilon must be positive, got {eps}")
    if not (sensitivity > 0):
        raise InvalidBudgetError(f"sensitivity must be positive, got {sensitivity}")
    rng = _rng(rng_seed)
    scale = sensitivity / eps
    if isinstance(counts, Mapping):
        keys = list(counts)
        vals = np.array([counts[k] for k in keys], dtype=float)
        noised = vals + rng.laplace(0.0, scale, size=vals.shape)
        return dict(zip(keys, noised.tolist()))
    arr = np.asarray(counts, dtype=float)
    return arr + rng.laplace(0.0, scale, size=arr.shape)


def normalize(weights: np.ndarray, axis: int = -1) -> np.ndarray:
    """Clamp negatives to zero and normalise; all-zero slices stay zero."""
    w = np.clip(np.asarray(weights, dtype=float), 0.0, None)
    s = w.sum(axis=axis, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(s > 0, w / np.where(s > 0, s, 1.0), 0.0)


def split_budget(epsilon: float, split: Sequence[float]) -> list[Fraction]:
    """Shares of ``epsilon`` proportional to ``split``, summing to it exactly."""
    if len(split) != 3:
        raise InvalidBudgetError("budget_split needs 3 entries (od, length, transitions)")
    fr = [Fraction(s) for s in split]
    if any(f <= 0 for f in fr):
        raise InvalidBudgetError("budget_split entries must be positive")
    tot = sum(fr)
    return [Fraction(epsilon) * f / tot for f in fr]


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class AdaptiveGrid:
    """Top grid plus an m x m subdivision of dense cells (``split_cells[cell] = m``)."""

    top: Grid
    split_cells: dict[int, int] = field(default_factory=dict)

    def _limits(self) -> tuple[float, float]:
        return self.top.width_m / self.top.cell_size_m, self.top.height_m / self.top.cell_size_m

    def subcells(self, cell: int) -> list[tuple[float, float, float, float]]:
        """Subcell extents (u0, v0, u1, v1) in grid units, clipped to the bbox."""
        col, row = self.top.col_row(cell)
        m = self.split_cells.get(cell, 1)
        umax, vmax = self._limits()
        out = []
        for b in range(m):
            for a in range(m):
                u0, v0 = col + a / m, row + b / m
                u1, v1 = min(col + (a + 1) / m, umax), min(row + (b + 1) / m, vmax)
                if u1 > u0 and v1 > v0:
                    out.append((u0, v0, u1, v1))
        return out

    def sub_grid(self, cell: int) -> Grid | None:
        m = self.split_cells.get(cell)
        if m is None:
            return None
        b = self.top.cell_bounds(cell)
        return Grid(BBox(b.min_lon, b.min_lat, b.max_lon, b.max_lat), self.top.cell_size_m / m)

    def sample(self, cells: Sequence[int], mode: CoordMode, rng: np.random.Generator) -> np.ndarray:
        uv = np.empty((len(cells), 2))
        for i, c in enumerate(cells):
            subs = self.subcells(c)
            u0, v0, u1, v1 = subs[int(rng.integers(len(subs)))] if len(subs) > 1 else subs[0]
            if mode is CoordMode.CENTER:
                uv[i] = ((u0 + u1) / 2.0, (v0 + v1) / 2.0)
            else:
                uv[i] = (rng.uniform(u0, u1), rng.uniform(v0, v1))
        out = self.top.from_units(uv)
        b = self.top.bbox
        out[:, 0] = np.clip(out[:, 0], b.min_lon, b.max_lon)
        out[:, 1] = np.clip(out[:, 1], b.min_lat, b.max_lat)
        return out


def split_factor(count: float, threshold: float) -> int | None:
    if not math.isfinite(threshold) or count <= threshold:
        return None
    return max(2, int(math.floor(math.sqrt(count / threshold))))


# ---------------------------------------------------------------------------
# discretisation


def _adjacent8(g: Grid, a: int, b: int) -> bool:
    ca, ra = a % g.n_cols, a // g.n_cols
    cb, rb = b % g.n_cols, b // g.n_cols
    return max(abs(ca - cb), abs(ra - rb)) == 1


def cell_sequence(g: Grid, t: Trajectory) -> list[int]:
    """Cells visited by ``t`` with repeats collapsed and gaps filled so moves are 8-adjacent."""
    if not g.bbox.contains_all(t.coords):
        raise OutOfBoundsError(f"trajectory {t.id!r} leaves the grid bbox")
    uv = g.to_units(t.coords)
    cols = np.minimum(np.floor(uv[:, 0]).astype(int), g.n_cols - 1)
    rows = np.minimum(np.floor(uv[:, 1]).astype(int), g.n_rows - 1)
    ids = rows * g.n_cols + cols
    seq = [int(ids[0])]
    for i in range(1, len(ids)):
        c = int(ids[i])
        if c == seq[-1]:
            continue
        if _adjacent8(g, seq[-1], c):
            seq.append(c)
            continue
        for cc, rr in walk_cells(uv[i - 1, 0], uv[i - 1, 1], uv[i, 0], uv[i, 1], g.n_cols, g.n_rows)[1:]:
            cid = rr * g.n_cols + cc
            if cid != seq[-1]:
                seq.append(cid)
    return seq


def _direction(g: Grid, a: int, b: int) -> int:
    return DIRS.index((b % g.n_cols - a % g.n_cols, b // g.n_cols - a // g.n_cols))


def _valid_dirs(g: Grid) -> np.ndarray:
    """(n_cells, 8) mask of moves that stay inside the grid."""
    col = np.arange(g.n_cells) % g.n_cols
    row = np.arange(g.n_cells) // g.n_cols
    mask = np.zeros((g.n_cells, 8), dtype=bool)
    for k, (dc, dr) in enumerate(DIRS):
        mask[:, k] = (col + dc >= 0) & (col + dc < g.n_cols) & (row + dr >= 0) & (row + dr < g.n_rows)
    return mask


# ---------------------------------------------------------------------------
# model


@dataclass
class MarkovTripModel:
    """Fitted DP trip model.

    For the first-order model ``od_hist`` is an (n_cells, n_cells) table and
    ``trans`` maps (current, destination) to noised weights over the 8 moves.
    For the second-order model ``od_hist`` holds start moves (n_cells, 9; the
    last column is END), ``len_hist`` is unused, ``first_order`` holds the
    (n_cells, 9) fallback chain and ``trans`` maps (previous, current) to 9
    weights.
    """

    grid: Grid
    order: ModelOrder
    adaptive: AdaptiveGrid
    epsilon: float
    budget_split: tuple[float, float, float]
    adaptive_threshold: float
    od_hist: np.ndarray
    len_hist: dict[tuple[int, int], np.ndarray]
    trans: dict[tuple[int, int], np.ndarray]
    first_order: np.ndarray | None = None
    max_length: int = 100
    spent: list[tuple[str, Fraction]] = field(default_factory=list)
    n_trips: int = 0
    skipped: int = 0

    def __post_init__(self):
        self._valid = _valid_dirs(self.grid)
        self.od_probs = normalize(self.od_hist.reshape(-1))
        if self.od_probs.sum() == 0:
            self.od_probs = np.full(self.od_hist.size, 1.0 / self.od_hist.size)
        self.trans_probs = {k: self._mask(k[1] if self.order is ModelOrder.SECOND else k[0], v) for k, v in self.trans.items()}
        self.len_probs = {k: normalize(v) for k, v in self.len_hist.items()}
        glob = sum((np.clip(v, 0, None) for v in self.len_hist.values()), np.zeros(self.max_length - 1))
        self.global_len = normalize(glob)
        if self.first_order is not None:
            self.first_probs = np.vstack([self._mask(c, self.first_order[c]) for c in range(self.grid.n_cells)])

    def _mask(self, cell: int, weights: np.ndarray) -> np.ndarray:
        w = np.clip(np.asarray(weights, dtype=float), 0.0, None).copy()
        w[:8] *= self._valid[cell]
        return normalize(w)

    @property
    def epsilon_consumed(self) -> Fraction:
        return sum((e for _, e in self.spent), Fraction(0))


def fit_model(
    ds: Sequence[Trajectory],
    grid: Grid,
    order: ModelOrder | str = ModelOrder.FIRST,
    budget: PrivacyBudget = PrivacyBudget(2.0),
    budget_split: Sequence[float] = (1 / 3, 1 / 3, 1 / 3),
    adaptive_threshold: float = math.inf,
    max_length: int = 100,
    seed=None,
) -> MarkovTripModel:
    """Fit a DP Markov trip model on the top-level ``grid``.

    ``budget_split`` divides epsilon between the OD (start) table, the length
    table (first-order chain for the second-order model) and the transition
    table.  A top cell whose noised endpoint count exceeds
    ``adaptive_threshold`` is split into m x m subcells,
    m = max(2, floor(sqrt(count / threshold))).
    """
    if len(ds) == 0:
        raise ValueError("cannot fit on an empty dataset")
    order = ModelOrder(order)
    shares = split_budget(budget.epsilon, budget_split)
    acct = PrivacyAccountant(budget.epsilon)
    sens = budget.sensitivity
    nc = grid.n_cells

    seqs: list[list[int]] = []
    skipped = 0
    for t in ds:
        try:
            seqs.append(cell_sequence(grid, t))
        except OutOfBoundsError:
            skipped += 1
    if not seqs:
        raise ValueError("no trip lies inside the grid bbox")

    if order is ModelOrder.FIRST:
        od = np.zeros((nc, nc))
        lens: dict[tuple[int, int], np.ndarray] = {}
        trans: dict[tuple[int, int], np.ndarray] = {}
        for s in seqs:
            o, d = s[0], s[-1]
            od[o, d] += 1
            L = min(max(2, len(s)), max_length)
            lens.setdefault((o, d), np.zeros(max_length - 1))[L - 2] += 1
            if len(s) > 1:
                w = 1.0 / (len(s) - 1)
                for a, b in zip(s[:-1], s[1:]):
                    trans.setdefault((a, d), np.zeros(8))[_direction(grid, a, b)] += w
        od_n = laplace_perturb(od, acct.spend("od", shares[0]), sens, _stream(seed, 0, 0))
        len_n = _perturb_table(lens, acct.spend("length", shares[1]), sens, _stream(seed, 0, 1))
        tr_n = _perturb_table(trans, acct.spend("transitions", shares[2]), sens, _stream(seed, 0, 2))
        first = None
        visits = od_n.sum(axis=1) + od_n.sum(axis=0) - np.diag(od_n)
    else:
        start = np.zeros((nc, 9))
        first_c = np.zeros((nc, 9))
        trans = {}
        for s in seqs:
            moves = [_direction(grid, a, b) for a, b in zip(s[:-1], s[1:])] + [END]
            start[s[0], moves[0]] += 1
            w1 = 1.0 / len(moves)
            for c, mv in zip(s, moves):
                first_c[c, mv] += w1
            if len(s) > 1:
                w2 = 1.0 / (len(moves) - 1)
                for k in range(1, len(s)):
                    trans.setdefault((s[k - 1], s[k]), np.zeros(9))[moves[k]] += w2
        od_n = laplace_perturb(start, acct.spend("start", shares[0]), sens, _stream(seed, 0, 0))
        first = laplace_perturb(first_c, acct.spend("first_order", shares[1]), sens, _stream(seed, 0, 1))
        tr_n = _perturb_table(trans, acct.spend("transitions", shares[2]), sens, _stream(seed, 0, 2))
        len_n = {}
        visits = od_n.sum(axis=1)
    acct.assert_exhausted()

    split = {}
    for c in range(nc):
        m = split_factor(max(0.0, float(visits[c])), adaptive_threshold)
        if m is not None:
            split[c] = m
    return MarkovTripModel(
        grid=grid,
        order=order,
        adaptive=AdaptiveGrid(grid, split),
        epsilon=budget.epsilon,
        budget_split=tuple(float(x) for x in budget_split),
        adaptive_threshold=adaptive_threshold,
        od_hist=od_n,
        len_hist=len_n,
        trans=tr_n,
        first_order=first,
        max_length=max_length,
        spent=list(acct.entries),
        n_trips=len(seqs),
        skipped=skipped,
    )


def _perturb_table(table: dict, eps: float, sens: float, seed) -> dict:
    """Noise every row of a sparse table with a single Laplace invocation."""
    if not table:
        return {}
    keys = sorted(table)
    noised = laplace_perturb(np.vstack([table[k] for k in keys]), eps, sens, seed)
    return {k: noised[i] for i, k in enumerate(keys)}


# ---------------------------------------------------------------------------
# generation


@dataclass
class GenerationReport:
    order: str
    epsilon: float
    budget_split: list[float]
    adaptive_threshold: float | None
    n_split_cells: int
    coord_mode: str
    seed: int | list | None
    n_trips: int
    fallback_events: int
    fit_skipped: int

    def to_dict(self) -> dict:
        return asdict(self)


def _draw(rng: np.random.Generator, probs: np.ndarray) -> int:
    cdf = np.cumsum(probs)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(probs) - 1))


def _step(model: MarkovTripModel, cur: int, probs: np.ndarray | None, rng: np.random.Generator):
    """Next move from ``probs``; uniform over valid neighbours when unusable."""
    if probs is None or probs.sum() <= 0:
        valid = np.flatnonzero(model._valid[cur])
        return int(valid[int(rng.integers(len(valid)))]), True
    return _draw(rng, probs), False


def _move(g: Grid, cell: int, k: int) -> int:
    dc, dr = DIRS[k]
    return cell + dr * g.n_cols + dc


def _cells_first(model: MarkovTripModel, rng: np.random.Generator) -> tuple[list[int], int]:
    g = model.grid
    nc = g.n_cells
    pair = _draw(rng, model.od_probs)
    o, d = divmod(pair, nc)
    lp = model.len_probs.get((o, d))
    if lp is None or lp.sum() <= 0:
        lp = model.global_len
    L = _draw(rng, lp) + 2 if lp.sum() > 0 else 2
    cells = [o]
    fallbacks = 0
    for _ in range(L - 2):
        cur = cells[-1]
        k, fb = _step(model, cur, model.trans_probs.get((cur, d)), rng)
        fallbacks += fb
        cells.append(_move(g, cur, k))
    cells.append(d)
    return cells, fallbacks


def _cells_second(model: MarkovTripModel, rng: np.random.Generator) -> tuple[list[int], int]:
    g = model.grid
    pair = _draw(rng, model.od_probs)
    c0, mv = divmod(pair, 9)
    cells = [c0]
    fallbacks = 0
    if mv == END or not model._valid[c0, mv]:
        return [c0, c0], 0
    cells.append(_move(g, c0, mv))
    while len(cells) < MAX_STEPS:
        prev, cur = cells[-2], cells[-1]
        probs = model.trans_probs.get((prev, cur))
        if probs is None or probs.sum() <= 0:
            probs = model.first_probs[cur]
        k, fb = _step(model, cur, probs, rng)
        fallbacks += fb
        if k == END:
            break
        cells.append(_move(g, cur, k))
    return cells, fallbacks


def _generate_chunk(model: MarkovTripModel, job):
    start, count, seed, mode, prefix = job
    rng = np.random.default_rng(_stream(seed, 1, start // CHUNK))
    draw = _cells_first if model.order is ModelOrder.FIRST else _cells_second
    trips, fallbacks = [], 0
    for i in range(start, start + count):
        cells, fb = draw(model, rng)
        fallbacks += fb
        if len(cells) < 2:
            cells = cells * 2
        coords = model.adaptive.sample(cells, mode, rng)
        trips.append(Trajectory(f"{prefix}{i:06d}", coords, Variant.ORIGINAL))
    return trips, fallbacks


def synthesize(
    model: MarkovTripModel,
    n: int,
    coord_mode: CoordMode | str = CoordMode.UNIFORM,
    rng_seed=None,
    workers: int | None = None,
    prefix: str = "syn",
) -> tuple[list[Trajectory], GenerationReport]:
    """Generate ``n`` trips and a report.

    Trips are produced in fixed-size chunks whose seeds derive from
    ``(rng_seed, chunk_index)``, so output does not depend on ``workers``.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    mode = CoordMode(coord_mode)
    seed = seed_parts(rng_seed)
    jobs = [(s, min(CHUNK, n - s), seed, mode, prefix) for s in range(0, n, CHUNK)]
    parts = pmap(_generate_chunk, jobs, shared=model, workers=workers)
    trips = [t for p, _ in parts for t in p]
    report = GenerationReport(
        order=model.order.value,
        epsilon=model.epsilon,
        budget_split=list(model.budget_split),
        adaptive_threshold=model.adaptive_threshold if math.isfinite(model.adaptive_threshold) else None,
        n_split_cells=len(model.adaptive.split_cells),
        coord_mode=mode.value,
        seed=seed,
        n_trips=len(trips),
        fallback_events=sum(f for _, f in parts),
        fit_skipped=model.skipped,
    )
    return trips, report


def generate_trips(model: MarkovTripModel, n: int, coord_mode: CoordMode | str = CoordMode.UNIFORM, rng_seed=None) -> list[Trajectory]:
    return synthesize(model, n, coord_mode, rng_seed)[0]


def od_histogram(grid: Grid, ds: Sequence[Trajectory]) -> dict[tuple[int, int], int]:
    """Counts of (origin cell, destination cell) pairs on ``grid``; trips outside are ignored."""
    out: dict[tuple[int, int], int] = {}
    for t in ds:
        if not grid.bbox.contains_all(t.coords[[0, -1]]):
            continue
        uv = grid.to_units(t.coords[[0, -1]])
        cols = np.minimum(np.floor(uv[:, 0]).astype(int), grid.n_cols - 1)
        rows = np.minimum(np.floor(uv[:, 1]).astype(int), grid.n_rows - 1)
        key = (int(rows[0] * grid.n_cols + cols[0]), int(rows[1] * grid.n_cols + cols[1]))
        out[key] = out.get(key, 0) + 1
    return out
