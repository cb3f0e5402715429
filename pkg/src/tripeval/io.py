"""Trajectory CSV and JSON/GeoJSON file helpers."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import InvalidTrajectoryError
from .geo import Trajectory, Variant

REQUIRED = ["trip_id", "seq", "lon", "lat"]


def read_trajectories(path: str | Path, variant: Variant | str | None = None) -> list[Trajectory]:
    """Read ``trip_id,seq,lon,lat`` rows (optional ``t`` and ``variant`` columns).

    Points are ordered by ``seq`` within each trip; trips come back sorted by id.
    """
    path = Path(path)
    groups: dict[str, list[tuple[int, float, float]]] = {}
    variants: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in REQUIRED if c not in (reader.fieldnames or [])]
        if missing:
            raise InvalidTrajectoryError(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rec = (int(row["seq"]), float(row["lon"]), float(row["lat"]))
            except (TypeError, ValueError) as exc:
                raise InvalidTrajectoryError(f"{path}:{lineno}: {exc}") from None
            groups.setdefault(row["trip_id"], []).append(rec)
            if row.get("variant"):
                variants[row["trip_id"]] = row["variant"]
    out = []
    for tid in sorted(groups):
        pts = sorted(groups[tid])
        v = variant or variants.get(tid, Variant.ORIGINAL)
        try:
            out.append(Trajectory(tid, [(lon, lat) for _, lon, lat in pts], Variant(v)))
        except InvalidTrajectoryError as exc:
            raise InvalidTrajectoryError(f"{path}: {exc}") from None
    return out


def write_trajectories(ds: Iterable[Trajectory], path: str | Path) -> None:
    """Write trips sorted by id; floats use their shortest exact representation."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REQUIRED + ["variant"])
        for t in sorted(ds, key=lambda t: t.id):
            for k, (lon, lat) in enumerate(t.coords):
                w.writerow([t.id, k, repr(float(lon)), repr(float(lat)), t.variant.value])


def clean_json(obj: Any) -> Any:
    """Replace non-finite floats with None and numpy scalars with Python ones."""
    if isinstance(obj, dict):
        return {str(k): clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean_json(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(clean_json(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(obj: Any, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")


def read_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def trajectories_geojson(ds: Sequence[Trajectory]) -> dict:
    return {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": t.coords.tolist()},
                "properties": {"trip_id": t.id, "variant": t.variant.value},
            }
            for t in ds
        ],
    }
