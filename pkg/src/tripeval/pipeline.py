"""End-to-end steps: dataset variants, synthesis runs, evaluation report."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Sequence

from . import io
from .config import RunConfig, SynthesisSettings
from .errors import ConfigError, GateFailure, MissingInputsError, UndefinedMetricError
from .geo import BBox, Grid, Trajectory, Variant, clip_to_bbox, path_length, rasterize_dataset, straight_line
from .matcher import MatchStatus, match_dataset, matchability_gate
from .metrics import (
    JSD_LOG_BASE,
    classify_preferences,
    cluster_flows,
    jsd,
    jsd_counts,
    length_stats,
    link_clusters,
    ndcg_flows,
    preference_scores,
    select_survey_roads,
)
from .network import RoadNetwork, Route, load_network, network_bbox, route_dataset, routes_geojson
from .synth import PrivacyBudget, fit_model, od_histogram, synthesize

log = logging.getLogger(__name__)

VARIANTS = ("straight_line", "original", "matched", "routed")


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# ---------------------------------------------------------------------------
# layout


def synthetic_path(cfg: RunConfig, name: str, repeat: int) -> Path:
    return cfg.out_dir / "synthetic" / name / f"rep{repeat}.csv"


def variant_dir(cfg: RunConfig, name: str, repeat: int | None) -> Path:
    base = cfg.out_dir / "variants" / name
    return base if repeat is None else base / f"rep{repeat}"


def dataset_sources(cfg: RunConfig) -> list[tuple[str, int | None, Path]]:
    """All datasets known to the run as (name, repeat, path); raw comes first."""
    out: list[tuple[str, int | None, Path]] = [("raw", None, cfg.raw)]
    for s in cfg.synthesis:
        out += [(s.name, r, synthetic_path(cfg, s.name, r)) for r in range(s.repeats)]
    for d in cfg.datasets:
        out += [(d.name, r, p) for r, p in enumerate(d.paths)]
    return out


def resolve_bbox(cfg: RunConfig, net: RoadNetwork) -> BBox:
    return cfg.bbox if cfg.bbox is not None else network_bbox(net, cfg.snap_radius_m)


# ---------------------------------------------------------------------------
# variants


@dataclass
class VariantSet:
    variants: dict[str, list[Trajectory]]
    match_report: dict
    routing_failed: list[str]


def build_variants(net: RoadNetwork, ds: Sequence[Trajectory], radius: float, snap_radius: float, workers: int | None = None) -> VariantSet:
    """Matched, routed and straight-line versions of ``ds``; trips that fail a step are absent from that variant."""
    results, report = match_dataset(net, ds, radius, workers)
    routes, failed = route_dataset(net, ds, snap_radius, workers)
    matched = [r.matched for r in results if r.status is not MatchStatus.FAILED]
    rep = report.to_dict()
    rep["radius_m"] = radius
    rep["failed_ids"] = [r.trip_id for r in results if r.status is MatchStatus.FAILED]
    rep["partly_failed_ids"] = [r.trip_id for r in results if r.status is MatchStatus.PARTLY_FAILED]
    return VariantSet(
        {
            "original": [t.with_variant(Variant.ORIGINAL) for t in ds],
            "matched": matched,
            "routed": [r.polyline for r in routes],
            "straight_line": [straight_line(t) for t in ds],
        },
        rep,
        failed,
    )


def cmd_variants(cfg: RunConfig, force: bool = False, workers: int | None = None) -> dict:
    """Write the four variants of every dataset.

    Datasets failing the matchability gate produce no output unless ``force``;
    GateFailure is raised after all other datasets are processed.
    """
    sources = dataset_sources(cfg)
    missing = [str(p) for _, _, p in sources if not p.exists()]
    if missing:
        raise MissingInputsError(missing)
    net = load_network(cfg.nodes, cfg.edges)
    summary: dict[str, Any] = {}
    refused = []
    for name, rep, path in sources:
        key = name if rep is None else f"{name}/rep{rep}"
        ds = io.read_trajectories(path)
        gate = matchability_gate(ds, cfg.generation_cell_m)
        entry: dict[str, Any] = {"gate": gate.to_dict()}
        if gate.passed is False and not force:
            refused.append(key)
            entry["status"] = "refused"
            summary[key] = entry
            log.warning("%s: median consecutive distance %.0f m exceeds the gate", key, gate.median)
            continue
        vs = build_variants(net, ds, cfg.radius_for(name), cfg.snap_radius_m, workers)
        out = variant_dir(cfg, name, rep)
        for v, trips in vs.variants.items():
            io.write_trajectories(trips, out / f"{v}.csv")
        report = {"gate": gate.to_dict(), "matching": vs.match_report, "routing_failed_ids": vs.routing_failed}
        io.write_json(report, out / "match_report.json")
        io.write_json(_routes_fc(vs.variants["routed"]), out / "routes.geojson")
        entry.update(status="ok", matching=vs.match_report, routing_failed=len(vs.routing_failed))
        summary[key] = entry
    if refused:
        raise GateFailure("matchability gate failed for: " + ", ".join(refused))
    return summary


def _routes_fc(routed: Sequence[Trajectory]) -> dict:
    return routes_geojson(Route((), t, path_length(t)) for t in routed)


# ---------------------------------------------------------------------------
# synthesis


def run_synthesis(cfg: RunConfig, s: SynthesisSettings, raw: Sequence[Trajectory], grid: Grid, workers: int | None = None):
    """Yield (repeat, trips, generation report dict) for every repeat of one setting."""
    for r in range(s.repeats):
        seed = (s.seed, r)
        model = fit_model(
            raw,
            grid,
            s.order,
            PrivacyBudget(s.epsilon),
            s.budget_split,
            s.adaptive_threshold,
            s.max_length,
            seed=seed,
        )
        trips, report = synthesize(model, s.n_trips, s.coord_mode, seed, workers, prefix=f"{s.name}-{r}-")
        rep = report.to_dict()
        rep["repeat"] = r
        rep["epsilon_spent"] = [[label, str(eps)] for label, eps in model.spent]
        yield r, trips, rep


def cmd_synthesize(cfg: RunConfig, workers: int | None = None) -> list[Path]:
    if not cfg.synthesis:
        raise ConfigError("no synthesis settings configured")
    for s in cfg.synthesis:
        if s.seed is None:
            raise ConfigError(f"synthesis {s.name!r}: a seed is required")
    if not cfg.raw.exists():
        raise MissingInputsError([str(cfg.raw)])
    net = load_network(cfg.nodes, cfg.edges)
    grid = Grid(resolve_bbox(cfg, net), cfg.generation_cell_m)
    raw = io.read_trajectories(cfg.raw)
    written = []
    for s in cfg.synthesis:
        for r, trips, rep in run_synthesis(cfg, s, raw, grid, workers):
            path = synthetic_path(cfg, s.name, r)
            io.write_trajectories(trips, path)
            io.write_json(rep, path.with_suffix(".report.json"))
            written.append(path)
    return written


# ---------------------------------------------------------------------------
# evaluation


def _safe(fn: Callable[[], Any]) -> Any:
    try:
        return fn()
    except UndefinedMetricError as exc:
        return {"undefined": str(exc)}


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def mean_blocks(blocks: Sequence[Any]) -> Any:
    """Element-wise arithmetic mean of structurally equal report blocks.

    Numbers are averaged over the repeats where they are defined; other
    leaves are kept when all repeats agree and dropped (None) otherwise.
    """
    first = blocks[0]
    if isinstance(first, dict):
        keys = sorted({k for b in blocks if isinstance(b, dict) for k in b})
        return {k: mean_blocks([b.get(k) for b in blocks if isinstance(b, dict)]) for k in keys}
    if isinstance(first, list) and all(isinstance(b, list) and len(b) == len(first) for b in blocks):
        return [mean_blocks([b[i] for b in blocks]) for i in range(len(first))]
    nums = [float(b) for b in blocks if _is_num(b) and math.isfinite(b)]
    if any(_is_num(b) for b in blocks):
        return sum(nums) / len(nums) if nums else None
    return first if all(b == first for b in blocks) else None


def load_variants(cfg: RunConfig, name: str, rep: int | None) -> dict[str, list[Trajectory]]:
    d = variant_dir(cfg, name, rep)
    return {v: io.read_trajectories(d / f"{v}.csv") for v in VARIANTS}


def _fragments(ds: Sequence[Trajectory], box: BBox) -> list[Trajectory]:
    out = []
    for t in ds:
        out += clip_to_bbox(t, box)
    return out


class Evaluator:
    """Holds the raw-data baselines that every dataset is compared against."""

    def __init__(self, cfg: RunConfig, workers: int | None = None):
        self.cfg = cfg
        self.workers = workers
        net = load_network(cfg.nodes, cfg.edges)
        self.bbox = resolve_bbox(cfg, net)
        self.eval_grid = Grid(self.bbox, cfg.eval_cell_m)
        self.gen_grid = Grid(self.bbox, cfg.generation_cell_m)
        self.raw = load_variants(cfg, "raw", None)
        self.baseline = rasterize_dataset(self.eval_grid, self.raw["matched"], clip=True)
        self.raw_pref = preference_scores(self.raw["matched"], self.raw["routed"], self.eval_grid, clip=True)
        self.raw_od = od_histogram(self.gen_grid, self.raw["original"])
        self.raw_clusters = {}
        for it in cfg.intersections:
            frags = _fragments(self.raw["matched"], it.bbox)
            self.raw_clusters[it.name] = cluster_flows(frags, bbox=it.bbox, workers=workers) if frags else None

    def block(self, name: str, v: dict[str, list[Trajectory]], artifacts: Path) -> dict:
        cfg = self.cfg
        out: dict[str, Any] = {}
        out["matchability"] = matchability_gate(v["original"], cfg.generation_cell_m).to_dict()
        out["lengths"] = _safe(lambda: length_stats(v["original"], v["matched"] or None, v["routed"] or None).to_dict())
        vol = {}
        for var in VARIANTS:
            if v[var]:
                vol[var] = _safe(lambda var=var: jsd(rasterize_dataset(self.eval_grid, v[var], clip=True), self.baseline))
            else:
                vol[var] = None
        out["traffic_volume_jsd"] = vol
        pref = preference_scores(v["matched"], v["routed"], self.eval_grid, clip=True)
        out["preference"] = {
            "n_cells": len(pref.n),
            "skipped_trips": pref.skipped,
            "classification": [
                _safe(lambda f=f, t=t: classify_preferences(self.raw_pref, pref, f, t).to_dict()) for f, t in cfg.classification
            ],
        }
        sel = select_survey_roads(pref, cfg.survey_n_per_class)
        io.write_json(sel.selection_geojson(), artifacts / "survey_selection.geojson")
        io.write_json(sel.overlay_geojson(), artifacts / "preference_overlay.geojson")
        out["survey_selection"] = sel.summary()
        flows = {}
        for it in cfg.intersections:
            raw_cs = self.raw_clusters[it.name]
            entry: dict[str, Any] = {}
            for var in ("matched", "routed"):
                frags = _fragments(v[var], it.bbox)
                if raw_cs is None:
                    entry[var] = {"undefined": "no raw fragments in intersection"}
                    continue
                if frags:
                    links = link_clusters(raw_cs, cluster_flows(frags, bbox=it.bbox, workers=self.workers))
                else:
                    links = link_clusters(raw_cs, type(raw_cs)((), it.bbox))
                entry[var] = {f"ndcg@{k}": _safe(lambda k=k: ndcg_flows(links, k)) for k in cfg.ndcg_k}
                entry[var]["n_fragments"] = len(frags)
            flows[it.name] = entry
        out["flows"] = flows
        syn_od = od_histogram(self.gen_grid, v["original"])
        out["od_jsd"] = _safe(lambda: jsd_counts(syn_od, self.raw_od)) if syn_od else None
        return out


def required_variant_files(cfg: RunConfig) -> list[Path]:
    files = []
    for name, rep, _ in dataset_sources(cfg):
        d = variant_dir(cfg, name, rep)
        files += [d / f"{v}.csv" for v in VARIANTS]
        files.append(d / "match_report.json")
    return files


def cmd_evaluate(cfg: RunConfig, workers: int | None = None) -> dict:
    """Compute the full metric report and write it with its GeoJSON artifacts."""
    missing = [str(p) for p in required_variant_files(cfg) if not p.exists()]
    if missing:
        raise MissingInputsError(missing)
    ev = Evaluator(cfg, workers)
    eval_dir = cfg.out_dir / "evaluation"
    datasets: dict[str, Any] = {}
    seeds: dict[str, Any] = {}
    for name, rep, _ in dataset_sources(cfg):
        v = ev.raw if rep is None else load_variants(cfg, name, rep)
        art = eval_dir / name if rep is None else eval_dir / name / f"rep{rep}"
        block = ev.block(name, v, art)
        block["matching"] = io.read_json(variant_dir(cfg, name, rep) / "match_report.json")["matching"]
        entry = datasets.setdefault(name, {"repeats": []})
        entry["repeats"].append(block)
    for name, entry in datasets.items():
        entry["mean"] = mean_blocks(entry["repeats"])
    for s in cfg.synthesis:
        seeds[s.name] = [[s.seed, r] for r in range(s.repeats)]
    report = {
        "provenance": {
            "config_hash": cfg.config_hash,
            "seeds": seeds,
            "tool_version": tool_version(),
            "jsd_log_base": JSD_LOG_BASE,
            "baseline": "raw/matched",
            "cell_counting": "once per trip",
            "length_ratio": "median of per-trip ratios",
            "flow_linking_order": "raw clusters by descending count",
            "gap_policy": "longest_run",
            "bbox": ev.bbox.as_list(),
        },
        "datasets": datasets,
    }
    io.write_json(report, eval_dir / "report.json")
    return report


def top_cells(cfg: RunConfig, n: int = 15, variant: str = "matched") -> list[dict]:
    """The ``n`` most passed evaluation cells of the raw data, to help choose intersection boxes."""
    path = variant_dir(cfg, "raw", None) / f"{variant}.csv"
    if not path.exists():
        raise MissingInputsError([str(path)])
    net = load_network(cfg.nodes, cfg.edges)
    grid = Grid(resolve_bbox(cfg, net), cfg.eval_cell_m)
    hist = rasterize_dataset(grid, io.read_trajectories(path), clip=True)
    ranked = sorted(hist.counts.items(), key=lambda kv: (-kv[1], kv[0]))[:n]
    return [{"cell": c, "count": k, "bbox": grid.cell_bounds(c).as_list()} for c, k in ranked]


# ---------------------------------------------------------------------------
# rendering


def _fmt(v, spec: str = ".2f") -> str:
    if v is None:
        return "-"
    if isinstance(v, dict):
        return "n/a"
    return format(v, spec)


def render_report(report: dict) -> str:
    """Plain-text tables of the cross-repeat means."""
    lines = [f"config {report['provenance']['config_hash'][:12]}  version {report['provenance']['tool_version']}", ""]
    ds = report["datasets"]

    lines.append("Consecutive-point distances (m)")
    lines.append(f"{'dataset':<16}{'min':>9}{'25%':>9}{'median':>9}{'75%':>9}{'max':>9}  gate")
    for name, e in ds.items():
        m = e["mean"]["matchability"]
        q = m["quantiles"]
        gate = {True: "pass", False: "fail", None: "n/a"}[m["passed"]] if m["passed"] in (True, False, None) else "mixed"
        lines.append(f"{name:<16}" + "".join(f"{_fmt(q[k], '.0f'):>9}" for k in ("min", "25%", "median", "75%", "max")) + f"  {gate}")

    lines += ["", "Trip lengths (km) and ratio to straight line (%)"]
    lines.append(f"{'dataset':<16}{'SL':>7}{'orig':>7}{'match':>7}{'route':>7}{'r_orig':>8}{'r_match':>8}{'r_route':>8}")
    for name, e in ds.items():
        m = e["mean"]["lengths"]
        if "undefined" in m:
            lines.append(f"{name:<16}undefined")
            continue
        lines.append(
            f"{name:<16}"
            + "".join(f"{_fmt(m[k]):>7}" for k in ("median_sl", "median_original", "median_matched", "median_routed"))
            + "".join(f"{_fmt(m[k], '.0f'):>8}" for k in ("ratio_original", "ratio_matched", "ratio_routed"))
        )

    lines += ["", "Traffic volume JSD against raw matched"]
    lines.append(f"{'dataset':<16}" + "".join(f"{v:>15}" for v in VARIANTS))
    for name, e in ds.items():
        m = e["mean"]["traffic_volume_jsd"]
        lines.append(f"{name:<16}" + "".join(f"{_fmt(m.get(v)):>15}" for v in VARIANTS))

    lines += ["", "Preference classification"]
    lines.append(f"{'dataset':<16}{'top%':>6}{'tol':>6}{'r':>7}{'acc%':>7}{'F1 avoid':>10}{'F1 pref':>10}")
    for name, e in ds.items():
        for c in e["mean"]["preference"]["classification"]:
            if not isinstance(c, dict) or "freq_top_pct" not in c:
                continue
            pc = c["per_class"]
            lines.append(
                f"{name:<16}{_fmt(c['freq_top_pct'], '.0f'):>6}{_fmt(c['tolerance'], '.1f'):>6}{_fmt(c['pearson_r']):>7}"
                f"{_fmt(c['accuracy'], '.0f'):>7}{_fmt(pc['avoided']['f1']):>10}{_fmt(pc['preferred']['f1']):>10}"
            )

    inters = sorted({i for e in ds.values() for i in e["mean"].get("flows", {})})
    if inters:
        lines += ["", "Traffic flow nDCG (matched / routed)"]
        for name, e in ds.items():
            for i in inters:
                f = e["mean"]["flows"].get(i, {})
                cells = []
                for var in ("matched", "routed"):
                    vals = f.get(var, {})
                    cells.append(" ".join(f"{k}={_fmt(v)}" for k, v in sorted(vals.items()) if k.startswith("ndcg")))
                lines.append(f"{name:<16}{i:<16}{cells[0]}  |  {cells[1]}")
    return "\n".join(lines) + "\n"

