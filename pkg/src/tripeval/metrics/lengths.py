"""Trip-length medians and detour ratios relative to the straight line."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..errors import UndefinedMetricError
from ..geo import Trajectory, haversine, path_length


@dataclass(frozen=True)
class LengthStats:
    """Medians in km; ratios are medians of per-trip ``variant / SL * 100``."""

    median_sl: float
    median_original: float
    median_matched: float
    median_routed: float
    ratio_original: float
    ratio_matched: float
    ratio_routed: float
    n_trips: int
    n_zero_sl: int

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in asdict(self).items()}


def _median(values: list[float]) -> float:
    return float(np.median(values)) if values else math.nan


def length_stats(
    original: Sequence[Trajectory],
    matched: Sequence[Trajectory] | None = None,
    routed: Sequence[Trajectory] | None = None,
) -> LengthStats:
    """Length statistics of a dataset and its variants, aligned by trip id.

    Trips missing from a variant are left out of that variant's numbers
    only.  Trips whose origin equals their destination have no defined
    ratio and are excluded from the ratio medians (counted in ``n_zero_sl``).
    """
    if len(original) == 0:
        raise UndefinedMetricError("no trips")
    sl = {t.id: haversine(t.coords[0], t.coords[-1]) for t in original}

    def block(ds):
        if ds is None:
            return math.nan, math.nan
        lengths, ratios = [], []
        for t in ds:
            base = sl.get(t.id)
            if base is None:
                continue
            length = path_length(t)
            lengths.append(length / 1000.0)
            if base > 0:
                ratios.append(100.0 * length / base)
        if not lengths:
            raise UndefinedMetricError("variant shares no trip id with the original dataset")
        return _median(lengths), _median(ratios)

    med_o, ratio_o = block(original)
    med_m, ratio_m = block(matched)
    med_r, ratio_r = block(routed)
    return LengthStats(
        median_sl=_median([v / 1000.0 for v in sl.values()]),
        median_original=med_o,
        median_matched=med_m,
        median_routed=med_r,
        ratio_original=ratio_o,
        ratio_matched=ratio_m,
        ratio_routed=ratio_r,
        n_trips=len(original),
        n_zero_sl=sum(v == 0 for v in sl.values()),
    )
