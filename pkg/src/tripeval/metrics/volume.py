"""Divergence between spatial histograms."""

from __future__ import annotations

from typing import Mapping

import numpy as np
from scipy.spatial.distance import jensenshannon

from ..errors import UndefinedMetricError
from ..geo import CellHistogram, check_same_grid

JSD_LOG_BASE = 2


def jsd_counts(p: Mapping, q: Mapping) -> float:
    """Jensen-Shannon divergence (base 2, in [0, 1]) of two count maps; missing keys count as 0."""
    keys = sorted(set(p) | set(q))
    a = np.array([p.get(k, 0.0) for k in keys], dtype=float)
    b = np.array([q.get(k, 0.0) for k in keys], dtype=float)
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("counts must be non-negative")
    if a.sum() <= 0 or b.sum() <= 0:
        raise UndefinedMetricError("both histograms need a positive count")
    # scipy returns the distance, i.e. the square root of the divergence
    d = float(jensenshannon(a, b, base=JSD_LOG_BASE)) ** 2
    return min(1.0, max(0.0, d))


def jsd(p: CellHistogram, q: CellHistogram) -> float:
    check_same_grid(p.grid, q.grid)
    return jsd_counts(p.counts, q.counts)
