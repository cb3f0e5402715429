import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tripeval import io
from tripeval.config import DEFAULT_CLASSIFICATION, apply_override, load_config, parse_config
from tripeval.errors import ConfigError, InvalidTrajectoryError
from tripeval.geo import Trajectory, Variant
from tripeval.synth import CoordMode, ModelOrder

MINIMAL = {"network": {"nodes": "n.csv", "edges": "e.csv"}, "raw": "raw.csv"}


# -- trajectory CSV --------------------------------------------------------------

coords = st.lists(st.tuples(st.floats(-180, 180), st.floats(-90, 90)), min_size=2, max_size=5)


@settings(max_examples=50)
@given(st.lists(coords, min_size=1, max_size=4))
def test_csv_round_trip_exact(tmp_path_factory, trips):
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    ds = [Trajectory(f"id{i}", c, Variant.MATCHED) for i, c in enumerate(trips)]
    io.write_trajectories(ds, path)
    back = io.read_trajectories(path)
    assert [t.id for t in back] == [t.id for t in ds]
    for a, b in zip(ds, back):
        assert np.array_equal(a.coords, b.coords)
        assert b.variant is Variant.MATCHED


def test_csv_orders_by_seq_and_id(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("trip_id,seq,lon,lat,t\nb,1,13.1,52.1,5\nb,0,13.0,52.0,1\na,0,13.2,52.2,0\na,1,13.3,52.3,9\n")
    ds = io.read_trajectories(p)
    assert [t.id for t in ds] == ["a", "b"]
    assert ds[1].coords[0].tolist() == [13.0, 52.0]
    assert ds[0].variant is Variant.ORIGINAL


def test_csv_errors(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("trip_id,lon,lat\nx,1,2\n")
    with pytest.raises(InvalidTrajectoryError, match="missing columns"):
        io.read_trajectories(p)
    p.write_text("trip_id,seq,lon,lat\nx,0,13.0,52.0\nx,1,abc,52.0\n")
    with pytest.raises(InvalidTrajectoryError, match=":3"):
        io.read_trajectories(p)
    p.write_text("trip_id,seq,lon,lat\nx,0,13.0,52.0\n")
    with pytest.raises(InvalidTrajectoryError):
        io.read_trajectories(p)


def test_csv_written_sorted_with_lf(tmp_path):
    p = tmp_path / "t.csv"
    io.write_trajectories([Trajectory("z", [(1, 2), (3, 4)]), Trajectory("a", [(5, 6), (7, 8)])], p)
    raw = p.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "trip_id,seq,lon,lat,variant"
    assert lines[1].startswith("a,0,")


def test_json_helpers(tmp_path):
    doc = {"b": math.nan, "a": [np.float64(1.5), np.int64(2), math.inf], "c": {1: True}}
    text = io.dumps(doc)
    assert json.loads(text) == {"a": [1.5, 2, None], "b": None, "c": {"1": True}}
    assert text.index('"a"') < text.index('"b"')
    io.write_json(doc, tmp_path / "x" / "d.json")
    assert io.read_json(tmp_path / "x" / "d.json")["a"][0] == 1.5


def test_trajectories_geojson():
    gj = io.trajectories_geojson([Trajectory("t", [(13.0, 52.0), (13.1, 52.1)], Variant.ROUTED)])
    f = gj["features"][0]
    assert f["geometry"]["type"] == "LineString"
    assert f["geometry"]["coordinates"][0] == [13.0, 52.0]
    assert f["properties"] == {"trip_id": "t", "variant": "routed"}


# -- config ----------------------------------------------------------------------


def test_defaults(tmp_path):
    cfg = parse_config({**MINIMAL, "synthesis": {"name": "m"}}, tmp_path)
    assert cfg.generation_cell_m == 500.0 and cfg.eval_cell_m == 40.0
    assert cfg.raw_radius == 10.0 and cfg.synthetic_radius == 20.0
    assert cfg.ndcg_k == (3, 10)
    assert cfg.classification == DEFAULT_CLASSIFICATION
    s = cfg.synthesis[0]
    assert (s.epsilon, s.n_trips, s.repeats) == (2.0, 5000, 5)
    assert s.order is ModelOrder.FIRST and s.coord_mode is CoordMode.UNIFORM
    assert s.seed is None
    assert cfg.raw == tmp_path / "raw.csv"


def test_radius_per_dataset(tmp_path):
    cfg = parse_config({**MINIMAL, "datasets": {"ext": {"paths": ["a.csv"], "radius": 12}, "other": "b.csv"}}, tmp_path)
    assert cfg.radius_for("raw") == 10.0
    assert cfg.radius_for("ext") == 12.0
    assert cfg.radius_for("other") == 20.0


@pytest.mark.parametrize(
    "doc",
    [
        {"raw": "r.csv"},
        {**MINIMAL, "synthesis": {"order": "third"}},
        {**MINIMAL, "synthesis": {"budget_split": [1, 1]}},
        {**MINIMAL, "synthesis": {"repeats": 0}},
        {**MINIMAL, "bbox": [1, 2]},
        {**MINIMAL, "datasets": {"raw": "x.csv"}},
        {**MINIMAL, "ndcg_k": [0]},
        [],
    ],
)
def test_invalid_configs(doc, tmp_path):
    with pytest.raises(ConfigError):
        parse_config(doc, tmp_path)


def test_overrides_and_hash(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({**MINIMAL, "synthesis": {"name": "m", "seed": 1}}))
    a = load_config(p)
    b = load_config(p, out_dir=str(tmp_path / "elsewhere"))
    c = load_config(p, ["grids.eval_cell_m=20"])
    d = load_config(p, seed=9)
    assert a.config_hash == b.config_hash
    assert c.eval_cell_m == 20.0 and c.config_hash != a.config_hash
    assert d.synthesis[0].seed == 9
    assert apply_override({}, "a.b=hello") == {"a": {"b": "hello"}}
    with pytest.raises(ConfigError):
        apply_override({}, "novalue")


def test_unreadable_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
