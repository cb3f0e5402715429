"""Selection of candidate roads for a rider survey, and inter-rater agreement."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from ..errors import UndefinedMetricError
from ..geo import Grid
from .preference import PreferenceScores, frequent_cells, score_class


def cell_polygon(grid: Grid, cell: int) -> list[list[float]]:
    b = grid.cell_bounds(cell)
    return [
        [b.min_lon, b.min_lat],
        [b.max_lon, b.min_lat],
        [b.max_lon, b.max_lat],
        [b.min_lon, b.max_lat],
        [b.min_lon, b.min_lat],
    ]


def cells_geojson(scores: PreferenceScores, cells: Sequence[int], extra: dict[int, dict] | None = None) -> dict:
    """Cell footprints as an RFC 7946 FeatureCollection of polygons."""
    feats = []
    for c in cells:
        props = scores.record(c)
        if extra and c in extra:
            props.update(extra[c])
        feats.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [cell_polygon(scores.grid, c)]},
                "properties": props,
            }
        )
    return {"type": "FeatureCollection", "features": feats}


@dataclass
class SurveySelection:
    components: dict[str, list[list[int]]]
    overlay_cells: list[int]
    shortfall: dict[str, bool]
    scores: PreferenceScores = field(repr=False)

    def selection_geojson(self) -> dict:
        extra = {}
        order = []
        for cls in ("preferred", "avoided"):
            for k, comp in enumerate(self.components[cls]):
                for c in comp:
                    extra[c] = {"component": f"{cls}-{k}", "component_size": len(comp)}
                    order.append(c)
        return cells_geojson(self.scores, order, extra)

    def overlay_geojson(self) -> dict:
        return cells_geojson(self.scores, self.overlay_cells)

    def summary(self) -> dict:
        return {
            "components": {k: [len(c) for c in v] for k, v in self.components.items()},
            "shortfall": self.shortfall,
            "n_overlay_cells": len(self.overlay_cells),
        }


def _components(grid: Grid, cells: list[int]) -> list[list[int]]:
    """8-connected groups of ``cells``, largest first (ties by smallest cell id)."""
    if not cells:
        return []
    mask = np.zeros((grid.n_rows, grid.n_cols), dtype=bool)
    for c in cells:
        mask[c // grid.n_cols, c % grid.n_cols] = True
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    groups: dict[int, list[int]] = {}
    for c in sorted(cells):
        groups.setdefault(int(labels[c // grid.n_cols, c % grid.n_cols]), []).append(c)
    return sorted(groups.values(), key=lambda g: (-len(g), g[0]))


def select_survey_roads(
    raw: PreferenceScores,
    n_per_class: int = 20,
    min_abs_score: float = 0.5,
    top_pct: float = 10.0,
    overlay_top_pct: float = 25.0,
) -> SurveySelection:
    """Strongly preferred/avoided, highly frequented cells merged into connected road pieces.

    Keeps cells with ``|score| > min_abs_score`` among the ``top_pct``
    percent most passed cells, groups 8-connected cells of the same class and
    returns the ``n_per_class`` largest groups per class.
    """
    frequent = set(frequent_cells(raw, top_pct))
    by_class: dict[str, list[int]] = {"preferred": [], "avoided": []}
    for c in sorted(frequent):
        s = raw.score(c)
        if abs(s) > min_abs_score:
            by_class[score_class(s)].append(c)
    components = {}
    shortfall = {}
    for cls, cells in by_class.items():
        comps = _components(raw.grid, cells)
        components[cls] = comps[:n_per_class]
        shortfall[cls] = len(comps) < n_per_class
    return SurveySelection(components, frequent_cells(raw, overlay_top_pct), shortfall, raw)


# ---------------------------------------------------------------------------
# agreement

CODES = {"P": "preferred", "A": "avoided", "N": "not_recognizable", "-": None}


@dataclass(frozen=True)
class SurveyMatrix:
    """Items x raters nominal codes; ``None`` marks a missing answer."""

    codes: tuple[tuple[str | None, ...], ...]
    item_ids: tuple[str, ...] = ()
    rater_ids: tuple[str, ...] = ()

    def __post_init__(self):
        widths = {len(r) for r in self.codes}
        if len(widths) > 1:
            raise ValueError("all items need one code per rater")
        if not self.codes or widths.pop() < 2:
            raise ValueError("need at least two raters")
        if not any(sum(v is not None for v in r) >= 2 for r in self.codes):
            raise ValueError("no item has two or more answers")

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[str | None]]) -> "SurveyMatrix":
        return cls(tuple(tuple(None if v in (None, "-", "") else v for v in r) for r in rows))

    @classmethod
    def from_csv(cls, path: str | Path) -> "SurveyMatrix":
        """Read ``item_id,<rater>...`` with codes P, A, N and ``-`` for missing."""
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty survey file")
        header, body = rows[0], rows[1:]
        codes, items = [], []
        for lineno, r in enumerate(body, start=2):
            if len(r) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
            items.append(r[0])
            row = []
            for v in r[1:]:
                v = v.strip().upper()
                if v not in CODES:
                    raise ValueError(f"{path}:{lineno}: unknown code {v!r}")
                row.append(CODES[v])
            codes.append(tuple(row))
        return cls(tuple(codes), tuple(items), tuple(header[1:]))


@dataclass(frozen=True)
class Agreement:
    alpha: float
    degenerate: bool
    n_pairable: int


def agreement(m: SurveyMatrix) -> Agreement:
    """Nominal Krippendorff's alpha from the coincidence matrix."""
    coincidence: Counter[tuple[str, str]] = Counter()
    for row in m.codes:
        vals = [v for v in row if v is not None]
        mu = len(vals)
        if mu < 2:
            continue
        for i, a in enumerate(vals):
            for j, b in enumerate(vals):
                if i != j:
                    coincidence[(a, b)] += 1.0 / (mu - 1)
    n_c: Counter[str] = Counter()
    for (a, _), w in coincidence.items():
        n_c[a] += w
    n = sum(n_c.values())
    if n <= 1:
        raise UndefinedMetricError("fewer than two pairable values")
    d_o = sum(w for (a, b), w in coincidence.items() if a != b) / n
    d_e = sum(n_c[a] * n_c[b] for a in n_c for b in n_c if a != b) / (n * (n - 1))
    if d_e == 0:
        return Agreement(1.0, True, int(round(n)))
    return Agreement(1.0 - d_o / d_e, False, int(round(n)))


def krippendorff_alpha(m: SurveyMatrix) -> float:
    return agreement(m).alpha
