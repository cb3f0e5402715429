"""Road preference scores: where riders leave the shortest route, and how well synthetic data reproduce it."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import OutOfBoundsError, UndefinedMetricError
from ..geo import Grid, Trajectory, trip_cell_set

CLASSES = ("avoided", "neither", "preferred")


@dataclass
class PreferenceScores:
    grid: Grid
    npref: dict[int, int] = field(default_factory=dict)
    navoid: dict[int, int] = field(default_factory=dict)
    n: dict[int, int] = field(default_factory=dict)
    skipped: int = 0

    def score(self, cell: int) -> float:
        n = self.n.get(cell, 0)
        if n == 0:
            return 0.0
        return (self.npref.get(cell, 0) - self.navoid.get(cell, 0)) / n

    @property
    def cells(self) -> list[int]:
        return sorted(self.n)

    @property
    def scores(self) -> dict[int, float]:
        return {c: self.score(c) for c in self.cells}

    def record(self, cell: int) -> dict:
        s = self.score(cell)
        return {
            "cell": cell,
            "score": s,
            "n": self.n.get(cell, 0),
            "npref": self.npref.get(cell, 0),
            "navoid": self.navoid.get(cell, 0),
            "class": score_class(s),
        }


def score_class(score: float) -> str:
    if score > 0:
        return "preferred"
    if score < 0:
        return "avoided"
    return "neither"


def preference_scores(
    matched: Sequence[Trajectory], routed: Sequence[Trajectory], grid: Grid, clip: bool = False
) -> PreferenceScores:
    """Per-cell counts of preferred (matched only), avoided (routed only) and total passes.

    Trips are paired by id; a trip without both variants, or one that leaves
    the grid while ``clip`` is off, is skipped and counted.
    """
    routed_by_id = {t.id: t for t in routed}
    out = PreferenceScores(grid)
    paired = set()
    for m in matched:
        r = routed_by_id.get(m.id)
        if r is None:
            out.skipped += 1
            continue
        paired.add(m.id)
        try:
            cm = trip_cell_set(grid, m, clip)
            cr = trip_cell_set(grid, r, clip)
        except OutOfBoundsError:
            out.skipped += 1
            continue
        for c in cm - cr:
            out.npref[c] = out.npref.get(c, 0) + 1
        for c in cr - cm:
            out.navoid[c] = out.navoid.get(c, 0) + 1
        for c in cm | cr:
            out.n[c] = out.n.get(c, 0) + 1
    out.skipped += sum(1 for t in routed if t.id not in paired)
    return out


def nearest_rank(values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile: the smallest value with at least ``pct`` percent of values at or below it."""
    if len(values) == 0:
        raise UndefinedMetricError("percentile of an empty series")
    if not 0 <= pct <= 100:
        raise ValueError("percentile must be within [0, 100]")
    s = sorted(values)
    rank = max(1, math.ceil(pct / 100.0 * len(s)))
    return s[rank - 1]


def frequent_cells(scores: PreferenceScores, top_pct: float) -> list[int]:
    """Cells whose pass count is within the top ``top_pct`` percent of all stored cells."""
    cells = scores.cells
    if not cells:
        return []
    cut = nearest_rank([scores.n[c] for c in cells], 100.0 - top_pct)
    return [c for c in cells if scores.n[c] >= cut]


@dataclass(frozen=True)
class Classification:
    freq_top_pct: float
    tolerance: float
    n_cells: int
    pearson_r: float
    accuracy: float
    per_class: dict[str, dict[str, float]]
    confusion: dict[str, dict[str, int]]

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and not math.isfinite(v) else v

        return {
            "freq_top_pct": self.freq_top_pct,
            "tolerance": self.tolerance,
            "n_cells": self.n_cells,
            "pearson_r": clean(self.pearson_r),
            "accuracy": self.accuracy,
            "per_class": {c: {k: clean(v) for k, v in m.items()} for c, m in self.per_class.items()},
            "confusion": self.confusion,
        }


def _ratio(a: int, b: int) -> float:
    return a / b if b else math.nan


def classify_preferences(raw: PreferenceScores, syn: PreferenceScores, freq_top_pct: float, tolerance: float) -> Classification:
    """Compare synthetic against raw preference classes on the raw top-frequented cells.

    A cell is correct when the classes agree or the scores differ by at most
    ``tolerance``; in the latter case the predicted class is set to the true
    one.  Cells never passed in the synthetic data score 0.  Metrics of a
    class that never occurs and is never predicted are NaN.
    """
    if not 0 <= tolerance < 2:
        raise ValueError("tolerance must be within [0, 2)")
    cells = frequent_cells(raw, freq_top_pct)
    if len(cells) < 2:
        raise UndefinedMetricError("fewer than two cells after the frequency restriction")
    true_s = np.array([raw.score(c) for c in cells])
    pred_s = np.array([syn.score(c) for c in cells])
    confusion = {a: {b: 0 for b in CLASSES} for a in CLASSES}
    correct = 0
    for ts, ps in zip(true_s, pred_s):
        tc, pc = score_class(ts), score_class(ps)
        if tc == pc or abs(ts - ps) <= tolerance:
            pc = tc
            correct += 1
        confusion[tc][pc] += 1
    per_class = {}
    for c in CLASSES:
        tp = confusion[c][c]
        n_pred = sum(confusion[a][c] for a in CLASSES)
        n_true = sum(confusion[c].values())
        p, r = _ratio(tp, n_pred), _ratio(tp, n_true)
        if n_pred == 0 and n_true == 0:
            f1 = math.nan
        elif tp == 0:
            f1 = 0.0
        else:
            f1 = 2 * p * r / (p + r)
        per_class[c] = {"precision": p, "recall": r, "f1": f1}
    if np.std(true_s) == 0 or np.std(pred_s) == 0:
        r_val = math.nan
    else:
        r_val = float(np.corrcoef(true_s, pred_s)[0, 1])
    return Classification(
        freq_top_pct=freq_top_pct,
        tolerance=tolerance,
        n_cells=len(cells),
        pearson_r=r_val,
        accuracy=100.0 * correct / len(cells),
        per_class=per_class,
        confusion=confusion,
    )
