"""Run configuration: one JSON document, optionally overridden from the command line."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .geo import BBox
from .synth import CoordMode, ModelOrder

DEFAULT_CLASSIFICATION = ((100.0, 0.0), (75.0, 0.0), (75.0, 0.3), (25.0, 0.3))


@dataclass(frozen=True)
class SynthesisSettings:
    name: str = "synthetic"
    order: ModelOrder = ModelOrder.FIRST
    epsilon: float = 2.0
    budget_split: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    adaptive_threshold: float = math.inf
    n_trips: int = 5000
    repeats: int = 5
    coord_mode: CoordMode = CoordMode.UNIFORM
    seed: int | None = None
    max_length: int = 100


@dataclass(frozen=True)
class DatasetSpec:
    """Externally produced dataset, one file per repeat."""

    name: str
    paths: tuple[Path, ...]
    radius: float | None = None


@dataclass(frozen=True)
class Intersection:
    name: str
    bbox: BBox


@dataclass(frozen=True)
class RunConfig:
    nodes: Path
    edges: Path
    raw: Path
    out_dir: Path
    datasets: tuple[DatasetSpec, ...] = ()
    synthesis: tuple[SynthesisSettings, ...] = ()
    bbox: BBox | None = None
    generation_cell_m: float = 500.0
    eval_cell_m: float = 40.0
    raw_radius: float = 10.0
    synthetic_radius: float = 20.0
    snap_radius_m: float = 50.0
    intersections: tuple[Intersection, ...] = ()
    ndcg_k: tuple[int, ...] = (3, 10)
    classification: tuple[tuple[float, float], ...] = DEFAULT_CLASSIFICATION
    survey_n_per_class: int = 20
    document: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def config_hash(self) -> str:
        """SHA-256 of the canonical config document (the output location is excluded)."""
        doc = {k: v for k, v in self.document.items() if k != "out_dir"}
        return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()

    def radius_for(self, name: str) -> float:
        if name == "raw":
            return self.raw_radius
        for d in self.datasets:
            if d.name == name and d.radius is not None:
                return d.radius
        return self.synthetic_radius


def _get(doc: dict, key: str, kind, default=None):
    if key not in doc or doc[key] is None:
        return default
    try:
        return kind(doc[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _bbox(value, where: str) -> BBox:
    try:
        return BBox.of([float(v) for v in value])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: invalid bbox {value!r} ({exc})") from None


def _synthesis(doc: dict) -> SynthesisSettings:
    try:
        thr = doc.get("adaptive_threshold")
        split = tuple(float(x) for x in doc.get("budget_split", (1 / 3, 1 / 3, 1 / 3)))
        s = SynthesisSettings(
            name=str(doc.get("name", "synthetic")),
            order=ModelOrder(doc.get("order", ModelOrder.FIRST.value)),
            epsilon=float(doc.get("epsilon", 2.0)),
            budget_split=split,  # type: ignore[arg-type]
            adaptive_threshold=math.inf if thr is None else float(thr),
            n_trips=int(doc.get("n_trips", 5000)),
            repeats=int(doc.get("repeats", 5)),
            coord_mode=CoordMode(doc.get("coord_mode", CoordMode.UNIFORM.value)),
            seed=None if doc.get("seed") is None else int(doc["seed"]),
            max_length=int(doc.get("max_length", 100)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"synthesis: {exc}") from None
    if len(s.budget_split) != 3 or any(x <= 0 for x in s.budget_split):
        raise ConfigError("synthesis.budget_split needs three positive entries")
    if s.repeats < 1 or s.n_trips < 1:
        raise ConfigError("synthesis.repeats and n_trips must be at least 1")
    return s


def parse_config(doc: dict, base_dir: Path | str = ".") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    base = Path(base_dir)

    def path(v):
        p = Path(v)
        return p if p.is_absolute() else base / p

    net = doc.get("network") or {}
    for key in ("nodes", "edges"):
        if key not in net:
            raise ConfigError(f"network.{key} is required")
    if "raw" not in doc:
        raise ConfigError("raw dataset path is required")
    grids = doc.get("grids") or {}
    radii = doc.get("match_radius") or {}
    synth = doc.get("synthesis") or []
    if isinstance(synth, dict):
        synth = [synth]
    settings = tuple(_synthesis(s) for s in synth)
    names = [s.name for s in settings]
    datasets = []
    for name, spec in (doc.get("datasets") or {}).items():
        if isinstance(spec, (str, list)):
            spec = {"paths": spec}
        paths = spec.get("paths")
        paths = [paths] if isinstance(paths, str) else list(paths or [])
        if not paths:
            raise ConfigError(f"datasets.{name}: no paths")
        datasets.append(DatasetSpec(name, tuple(path(p) for p in paths), _get(spec, "radius", float)))
        names.append(name)
    if "raw" in names or len(set(names)) != len(names):
        raise ConfigError("dataset names must be unique and must not be 'raw'")
    inters = []
    for i, it in enumerate(doc.get("intersections") or []):
        inters.append(Intersection(str(it.get("name", f"intersection{i}")), _bbox(it.get("bbox"), f"intersections[{i}]")))
    classification = doc.get("classification")
    if classification is None:
        classification = DEFAULT_CLASSIFICATION
    try:
        classification = tuple((float(f), float(t)) for f, t in classification)
        ndcg_k = tuple(int(k) for k in doc.get("ndcg_k", (3, 10)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"classification/ndcg_k: {exc}") from None
    if any(k < 1 for k in ndcg_k):
        raise ConfigError("ndcg_k entries must be at least 1")
    return RunConfig(
        nodes=path(net["nodes"]),
        edges=path(net["edges"]),
        raw=path(doc["raw"]),
        out_dir=path(doc.get("out_dir", "out")),
        datasets=tuple(datasets),
        synthesis=settings,
        bbox=_bbox(doc["bbox"], "bbox") if doc.get("bbox") is not None else None,
        generation_cell_m=_get(grids, "generation_cell_m", float, 500.0),
        eval_cell_m=_get(grids, "eval_cell_m", float, 40.0),
        raw_radius=_get(radii, "raw", float, 10.0),
        synthetic_radius=_get(radii, "synthetic", float, 20.0),
        snap_radius_m=_get(doc, "snap_radius_m", float, 50.0),
        intersections=tuple(inters),
        ndcg_k=ndcg_k,
        classification=classification,
        survey_n_per_class=_get(doc.get("survey") or {}, "n_per_class", int, 20),
        document=doc,
    )


def apply_override(doc: dict, assignment: str) -> dict:
    """Set ``a.b.c=<json value>`` in a copy of ``doc`` (plain strings are accepted unquoted)."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    try:
        value: Any = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out = copy.deepcopy(doc)
    node = out
    parts = key.split(".")
    for p in parts[:-1]:
        nxt = node.get(p)
        if not isinstance(nxt, dict):
            nxt = {}
            node[p] = nxt
        node = nxt
    node[parts[-1]] = value
    return out


def load_config(path: str | Path, overrides: list[str] = (), seed: int | None = None, out_dir: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    for o in overrides:
        doc = apply_override(doc, o)
    if seed is not None:
        synth = doc.get("synthesis")
        if isinstance(synth, list):
            doc["synthesis"] = [{**s, "seed": seed} for s in synth]
        else:
            doc["synthesis"] = {**(synth or {}), "seed": seed}
    if out_dir is not None:
        doc["out_dir"] = str(Path(out_dir).resolve())
    return parse_config(doc, path.parent)
