import itertools
import math

import krippendorff
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import DETOURS, best_assignment, dcg_brute, set_difference_oracle
from tripeval.errors import GridMismatchError, UndefinedMetricError
from tripeval.fixtures import grid_path, manhattan_network, network_bbox
from tripeval.geo import BBox, CellHistogram, Grid, Trajectory, Variant, cell_of
from tripeval.metrics import (
    PreferenceScores,
    SurveyMatrix,
    agreement,
    classify_preferences,
    cluster_flows,
    dcg,
    frequent_cells,
    hausdorff_matrix,
    jsd,
    jsd_counts,
    krippendorff_alpha,
    length_stats,
    link_clusters,
    ndcg_flows,
    nearest_rank,
    preference_scores,
    select_survey_roads,
)
from tripeval.metrics.flows import LinkedCluster

N = 20
BASE = (13.3, 52.5)


def shift(p, east_m, north_m):
    return (p[0] + east_m / (111_194.93 * math.cos(math.radians(p[1]))), p[1] + north_m / 111_194.93)


@pytest.fixture(scope="module")
def net():
    return manhattan_network(N, 100.0)


@pytest.fixture(scope="module")
def grid40(net):
    return Grid(network_bbox(net, 50.0), 40.0)


# -- lengths -------------------------------------------------------------------


def test_length_ratio_single_trip():
    a = BASE
    b = shift(a, 1000, 0)
    orig = Trajectory("t", [a, b])
    up = shift(a, 500, math.sqrt(650**2 - 500**2))
    matched = Trajectory("t", [a, up, b], Variant.MATCHED)
    s = length_stats([orig], matched=[matched])
    assert s.ratio_matched == pytest.approx(130.0, rel=1e-3)
    assert s.median_sl == pytest.approx(1.0, rel=1e-3)
    assert s.ratio_original == pytest.approx(100.0)


def test_length_ratio_straight_routes():
    trips = [Trajectory(f"t{i}", [BASE, shift(BASE, 100 * (i + 1), 0)]) for i in range(5)]
    routed = [Trajectory(t.id, t.coords, Variant.ROUTED) for t in trips]
    assert length_stats(trips, routed=routed).ratio_routed == pytest.approx(100.0)


def test_length_ratio_is_median_of_per_trip_ratios():
    trips, matched = [], []
    for i, (sl, length) in enumerate([(100, 150), (1000, 1100), (400, 800)]):
        a, b = BASE, shift(BASE, sl, 0)
        trips.append(Trajectory(f"t{i}", [a, b]))
        h = math.sqrt((length / 2) ** 2 - (sl / 2) ** 2)
        matched.append(Trajectory(f"t{i}", [a, shift(BASE, sl / 2, h), b], Variant.MATCHED))
    s = length_stats(trips, matched=matched)
    assert s.ratio_matched == pytest.approx(150.0, rel=1e-3)


def test_length_zero_sl_excluded():
    loop = Trajectory("loop", [BASE, shift(BASE, 100, 0), BASE])
    line = Trajectory("line", [BASE, shift(BASE, 100, 0)])
    s = length_stats([loop, line])
    assert s.n_zero_sl == 1
    assert s.ratio_original == pytest.approx(100.0)


def test_length_no_shared_ids():
    with pytest.raises(UndefinedMetricError):
        length_stats([Trajectory("a", [BASE, shift(BASE, 10, 0)])], matched=[Trajectory("b", [BASE, shift(BASE, 10, 0)])])


# -- JSD ------------------------------------------------------------------------


def entropy_jsd(p, q):
    keys = sorted(set(p) | set(q))
    a = np.array([p.get(k, 0) for k in keys], float)
    b = np.array([q.get(k, 0) for k in keys], float)
    a, b = a / a.sum(), b / b.sum()
    m = (a + b) / 2

    def h(x):
        x = x[x > 0]
        return -(x * np.log2(x)).sum()

    return h(m) - (h(a) + h(b)) / 2


def test_jsd_examples():
    assert jsd_counts({"a": 3, "b": 1}, {"a": 3, "b": 1}) == 0.0
    assert jsd_counts({"a": 1}, {"b": 5}) == pytest.approx(1.0, abs=1e-12)
    assert jsd_counts({"a": 1, "b": 1}, {"a": 1}) == pytest.approx(0.3113, abs=1e-4)
    assert jsd_counts({"a": 1, "b": 1}, {"a": 1}) == pytest.approx(entropy_jsd({"a": 1, "b": 1}, {"a": 1}), abs=1e-12)


def test_jsd_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        k = int(rng.integers(1, 12))
        p = {i: int(v) for i, v in enumerate(rng.integers(0, 6, k))}
        q = {i: int(v) for i, v in enumerate(rng.integers(0, 6, k))}
        if not sum(p.values()) or not sum(q.values()):
            continue
        d = jsd_counts(p, q)
        assert d == pytest.approx(jsd_counts(q, p), abs=1e-15)
        assert 0.0 <= d <= 1.0
        assert d == pytest.approx(entropy_jsd(p, q), abs=1e-9)
        scaled = {i: 3 * v for i, v in p.items()}
        assert jsd_counts(p, scaled) == pytest.approx(0.0, abs=1e-12)
        prop = all(p.get(i, 0) * sum(q.values()) == q.get(i, 0) * sum(p.values()) for i in set(p) | set(q))
        assert (d < 1e-12) == prop


def test_jsd_grid_mismatch():
    g1 = Grid(BBox(13.0, 52.0, 13.1, 52.1), 40.0)
    g2 = Grid(BBox(13.0, 52.0, 13.1, 52.1), 500.0)
    with pytest.raises(GridMismatchError):
        jsd(CellHistogram(g1, {0: 1}), CellHistogram(g2, {0: 1}))


def test_jsd_needs_mass():
    with pytest.raises(UndefinedMetricError):
        jsd_counts({}, {"a": 1})


# -- preference scores -----------------------------------------------------------

@pytest.fixture(scope="module")
def detour_variants(net):
    matched = [grid_path(net, N, m, f"t{i}") for i, (m, _) in enumerate(DETOURS)]
    routed = [grid_path(net, N, r, f"t{i}") for i, (_, r) in enumerate(DETOURS)]
    matched = [Trajectory(t.id, t.coords, Variant.MATCHED) for t in matched]
    routed = [Trajectory(t.id, t.coords, Variant.ROUTED) for t in routed]
    return matched, routed


def test_preference_matches_oracle(grid40, detour_variants):
    matched, routed = detour_variants
    ps = preference_scores(matched, routed, grid40)
    npref, navoid, n = set_difference_oracle(grid40, matched, routed)
    assert ps.npref == npref and ps.navoid == navoid and ps.n == n
    for c in n:
        assert ps.score(c) == (npref.get(c, 0) - navoid.get(c, 0)) / n[c]


def test_preference_identical_variants(grid40, detour_variants):
    matched, _ = detour_variants
    ps = preference_scores(matched, matched, grid40)
    assert set(ps.scores.values()) == {0.0}


def test_preference_single_detour(grid40, net):
    m = grid_path(net, N, [(2, 2), (2, 3), (3, 3), (3, 2)], "d")
    r = grid_path(net, N, [(2, 2), (3, 2)], "d")
    ps = preference_scores([m], [r], grid40)
    detour = cell_of(grid40, net.nodes[str(3 * (N + 1) + 2)])
    a, b = np.array(net.nodes[str(2 * (N + 1) + 2)]), np.array(net.nodes[str(2 * (N + 1) + 3)])
    bypassed = cell_of(grid40, (a + b) / 2)
    assert ps.score(detour) == 1.0
    assert ps.score(bypassed) == -1.0
    assert set(ps.scores.values()) <= {-1.0, 0.0, 1.0}


def test_preference_opposite_trips_cancel(grid40, net):
    a_m = grid_path(net, N, [(2, 2), (2, 3), (3, 3), (3, 2)], "a")
    a_r = grid_path(net, N, [(2, 2), (3, 2)], "a")
    b_m = grid_path(net, N, [(2, 2), (3, 2)], "b")
    b_r = grid_path(net, N, [(2, 2), (2, 3), (3, 3), (3, 2)], "b")
    ps = preference_scores([a_m, b_m], [a_r, b_r], grid40)
    for c in ps.cells:
        if ps.npref.get(c) and ps.navoid.get(c):
            assert (ps.npref[c], ps.navoid[c], ps.n[c], ps.score(c)) == (1, 1, 2, 0.0)
    assert any(ps.npref.get(c) and ps.navoid.get(c) for c in ps.cells)


def test_preference_skips_unpaired(grid40, detour_variants):
    matched, routed = detour_variants
    ps = preference_scores(matched[:5], routed[2:], grid40)
    # matched t0,t1 and routed t5..t9 lack a partner
    assert ps.skipped == 2 + 5


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, len(DETOURS) - 1), min_size=1, max_size=8, unique=True))
def test_preference_bounds_and_antisymmetry(idx):
    net = _NET
    grid = Grid(network_bbox(net, 50.0), 40.0)
    m = [grid_path(net, N, DETOURS[i][0], f"t{i}") for i in idx]
    r = [grid_path(net, N, DETOURS[i][1], f"t{i}") for i in idx]
    fwd = preference_scores(m, r, grid)
    bwd = preference_scores(r, m, grid)
    assert all(-1.0 <= s <= 1.0 for s in fwd.scores.values())
    assert fwd.npref == bwd.navoid and fwd.navoid == bwd.npref and fwd.n == bwd.n
    assert all(fwd.n[c] >= max(fwd.npref.get(c, 0), fwd.navoid.get(c, 0)) for c in fwd.cells)


_NET = manhattan_network(N, 100.0)


# -- classification ----------------------------------------------------------------


def scores_from(grid, diffs, n=2):
    ps = PreferenceScores(grid)
    for c, d in enumerate(diffs):
        ps.n[c] = n
        if d > 0:
            ps.npref[c] = d
        elif d < 0:
            ps.navoid[c] = -d
    return ps


def test_nearest_rank():
    vals = list(range(1, 11))
    assert nearest_rank(vals, 75) == 8
    assert nearest_rank(vals, 0) == 1
    assert nearest_rank(vals, 100) == 10
    assert nearest_rank([5], 30) == 5
    with pytest.raises(UndefinedMetricError):
        nearest_rank([], 50)


def test_frequent_cells_top_quarter(grid40):
    ps = PreferenceScores(grid40, n={c: c + 1 for c in range(10)})
    assert frequent_cells(ps, 25) == [7, 8, 9]
    assert frequent_cells(ps, 100) == list(range(10))


def test_classification_ten_cells_three_flips(grid40):
    # scores: +1 x3, -1 x3, 0 x2, +0.5, -0.5
    raw = scores_from(grid40, [2, 2, 2, -2, -2, -2, 0, 0, 1, -1])
    # flips: cell 0 preferred->avoided, cell 3 avoided->neither, cell 6 neither->preferred
    syn = scores_from(grid40, [-2, 2, 2, 0, -2, -2, 2, 0, 1, -1])
    res = classify_preferences(raw, syn, 100, 0.0)
    assert res.accuracy == pytest.approx(70.0)
    conf = res.confusion
    assert conf["preferred"] == {"preferred": 3, "avoided": 1, "neither": 0}
    assert conf["avoided"] == {"avoided": 3, "neither": 1, "preferred": 0}
    assert conf["neither"] == {"preferred": 1, "neither": 1, "avoided": 0}
    assert res.per_class["preferred"]["f1"] == pytest.approx(0.75)
    assert res.per_class["avoided"]["f1"] == pytest.approx(0.75)
    assert res.per_class["neither"]["f1"] == pytest.approx(0.5)
    assert res.pearson_r == pytest.approx(np.corrcoef([1, 1, 1, -1, -1, -1, 0, 0, .5, -.5], [-1, 1, 1, 0, -1, -1, 1, 0, .5, -.5])[0, 1])


def test_classification_tolerance_coercion(grid40):
    diffs = [-10, -6, -3, -1, 0, 0, 1, 3, 5, 8]
    raw = scores_from(grid40, diffs, n=10)
    syn = scores_from(grid40, [d + 2 for d in diffs], n=10)
    res = classify_preferences(raw, syn, 100, 0.3)
    assert res.accuracy == 100.0
    strict = classify_preferences(raw, syn, 100, 0.0)
    assert strict.accuracy < 100.0


@pytest.mark.parametrize("top,tol", [(100, 0.0), (75, 0.0), (75, 0.3), (25, 0.3)])
def test_classification_self(grid40, detour_variants, top, tol):
    matched, routed = detour_variants
    ps = preference_scores(matched, routed, grid40)
    res = classify_preferences(ps, ps, top, tol)
    assert res.accuracy == 100.0
    assert res.pearson_r == pytest.approx(1.0)
    for m in res.per_class.values():
        assert math.isnan(m["f1"]) or m["f1"] == 1.0


def test_classification_absent_syn_cells_score_zero(grid40):
    raw = scores_from(grid40, [2, -2, 0, 1])
    syn = PreferenceScores(grid40)
    res = classify_preferences(raw, syn, 100, 0.0)
    assert res.accuracy == 25.0
    assert math.isnan(res.pearson_r)


def test_classification_needs_two_cells(grid40):
    raw = scores_from(grid40, [2])
    with pytest.raises(UndefinedMetricError):
        classify_preferences(raw, raw, 100, 0.0)


# -- survey ---------------------------------------------------------------------------


def test_survey_nothing_strong(grid40):
    ps = scores_from(grid40, [0, 1, -1, 0], n=4)
    sel = select_survey_roads(ps, n_per_class=2, top_pct=100)
    assert sel.components == {"preferred": [], "avoided": []}
    assert sel.shortfall == {"preferred": True, "avoided": True}


def test_survey_largest_component(grid40):
    ps = PreferenceScores(grid40)
    corridor = [grid40.cell_id(c, 5) for c in range(3, 8)]
    lone = grid40.cell_id(20, 20)
    for c in corridor + [lone]:
        ps.n[c] = 10
        ps.npref[c] = 9
    sel = select_survey_roads(ps, n_per_class=1, top_pct=100)
    assert sel.components["preferred"] == [sorted(corridor)]
    assert sel.shortfall["preferred"] is False
    gj = sel.selection_geojson()
    assert gj["type"] == "FeatureCollection" and len(gj["features"]) == 5
    ring = gj["features"][0]["geometry"]["coordinates"][0]
    assert ring[0] == ring[-1] and len(ring) == 5


def test_survey_diagonal_cells_connect(grid40):
    ps = PreferenceScores(grid40)
    for k in range(4):
        c = grid40.cell_id(5 + k, 5 + k)
        ps.n[c], ps.navoid[c] = 4, 4
    sel = select_survey_roads(ps, n_per_class=3, top_pct=100)
    assert len(sel.components["avoided"]) == 1


def test_krippendorff_examples():
    assert krippendorff_alpha(SurveyMatrix.from_rows([["P", "P"], ["A", "A"], ["N", "N"]])) == 1.0
    assert krippendorff_alpha(SurveyMatrix.from_rows([["A", "B"], ["B", "A"]])) == pytest.approx(-0.5, abs=1e-9)
    same = agreement(SurveyMatrix.from_rows([["P", "P"], ["P", "P"]]))
    assert same.alpha == 1.0 and same.degenerate


def test_krippendorff_against_package():
    rng = np.random.default_rng(0)
    codes = ["P", "A", "N"]
    for _ in range(200):
        n_items, n_raters = int(rng.integers(2, 12)), int(rng.integers(2, 6))
        data = rng.integers(0, 3, size=(n_items, n_raters)).astype(float)
        data[rng.random(data.shape) < 0.15] = np.nan
        rows = [[None if np.isnan(v) else codes[int(v)] for v in r] for r in data]
        try:
            m = SurveyMatrix.from_rows(rows)
            res = agreement(m)
        except (ValueError, UndefinedMetricError):
            continue
        if res.degenerate:
            continue
        want = krippendorff.alpha(reliability_data=data.T, level_of_measurement="nominal")
        assert res.alpha == pytest.approx(want, abs=1e-9)


def test_survey_matrix_csv(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("item_id,r1,r2,r3\ns1,P,P,-\ns2,A,a,N\n")
    m = SurveyMatrix.from_csv(p)
    assert m.rater_ids == ("r1", "r2", "r3")
    assert m.codes[0] == ("preferred", "preferred", None)
    p.write_text("item_id,r1,r2\ns1,P,X\n")
    with pytest.raises(ValueError):
        SurveyMatrix.from_csv(p)


def test_survey_matrix_validation():
    with pytest.raises(ValueError):
        SurveyMatrix.from_rows([["P"]])
    with pytest.raises(ValueError):
        SurveyMatrix.from_rows([["P", "-"], ["-", "A"]])


# -- flows ------------------------------------------------------------------------------


def segment(y, x0=0.0, x1=100.0, tid="f", dx=0.0):
    return Trajectory(tid, [shift(BASE, x0 + dx, y), shift(BASE, x1 + dx, y)])


def naive_complete_linkage(d, cutoff):
    clusters = [[i] for i in range(len(d))]
    while len(clusters) > 1:
        best = None
        for a, b in itertools.combinations(range(len(clusters)), 2):
            h = max(d[i, j] for i in clusters[a] for j in clusters[b])
            if best is None or h < best[0]:
                best = (h, a, b)
        if best[0] > cutoff:
            break
        _, a, b = best
        clusters[a] = sorted(clusters[a] + clusters[b])
        del clusters[b]
    return sorted(clusters)


def test_cluster_identical_and_single():
    f = segment(0.0)
    assert len(cluster_flows([f] * 5).clusters) == 1
    one = cluster_flows([f])
    assert len(one.clusters) == 1 and one.clusters[0].count == 1


def test_cluster_two_groups():
    rng = np.random.default_rng(0)
    frags = []
    for k in range(12):
        y = 0.0 if k % 2 == 0 else 50.0
        frags.append(segment(y + rng.uniform(-0.4, 0.4), tid=f"f{k:02d}"))
    cs = cluster_flows(frags, 5.0)
    assert len(cs.clusters) == 2
    assert [c.members for c in cs.clusters] == [tuple(range(0, 12, 2)), tuple(range(1, 12, 2))]
    assert cs.n_fragments == 12
    assert len(cs.clusters[0].representatives) == 3
    assert cs.clusters[0].label == "f00"


def test_cluster_matches_naive_linkage():
    rng = np.random.default_rng(1)
    for trial in range(15):
        frags = [segment(rng.uniform(0, 30), tid=f"f{k}", dx=rng.uniform(0, 6)) for k in range(10)]
        d = hausdorff_matrix(frags)
        cs = cluster_flows(frags, 5.0)
        assert sorted(list(c.members) for c in cs.clusters) == naive_complete_linkage(d, 5.0)
        for c in cs.clusters:
            sub = d[np.ix_(c.members, c.members)]
            assert sub.max() <= 5.0


def test_hausdorff_matrix_cap_and_dedupe():
    frags = [segment(0.0), segment(3.0), segment(40.0), segment(0.0)]
    full = hausdorff_matrix(frags)
    capped = hausdorff_matrix(frags, cap=5.0)
    assert full[0, 1] == pytest.approx(3.0, abs=1e-6)
    assert full[0, 3] == 0.0
    assert np.allclose(full[full <= 5], capped[full <= 5])
    assert (capped[full > 5] > 5).all()
    assert np.array_equal(hausdorff_matrix(frags, workers=2), full)


def clusters_at(ys_counts, prefix):
    frags = []
    for k, (y, count) in enumerate(ys_counts):
        frags += [segment(y, tid=f"{prefix}{k}")] * count
    return cluster_flows(frags, 5.0)


def test_link_self_and_empty():
    raw = clusters_at([(0, 4), (30, 2), (60, 1)], "r")
    links = link_clusters(raw, raw)
    assert all(l.syn_index == l.raw_index and l.distance == 0 for l in links)
    assert ndcg_flows(links, 3) == 1.0
    empty = link_clusters(raw, type(raw)(()))
    assert all(l.syn_index is None and l.syn_count == 0 for l in empty)


def test_link_greedy_versus_optimal():
    raw = clusters_at([(0, 10), (6, 5), (20, 1)], "r")
    syn = clusters_at([(3, 3), (-4, 3), (21, 3)], "s")
    links = {l.raw_label: l for l in link_clusters(raw, syn, 5.0)}
    # greedy: the largest raw cluster takes the nearest synthetic one, leaving r1 stranded
    assert links["r0"].syn_index == 0 and links["r0"].distance == pytest.approx(3, abs=1e-6)
    assert links["r1"].syn_index is None
    assert links["r2"].syn_index == 2
    dist = np.array([[abs(a - b) for b in (3, -4, 21)] for a in (0, 6, 20)], float)
    optimal = best_assignment(dist, 5.0)
    assert len(optimal) == 3 > sum(l.syn_index is not None for l in links.values())


def test_ndcg_formula_reversed():
    links = [LinkedCluster(i, f"c{i}", rc, i, sc, 0.0) for i, (rc, sc) in enumerate([(10, 1), (5, 5), (1, 10)])]
    want = (1 + 5 / math.log2(3) + 10 / 2) / (10 + 5 / math.log2(3) + 1 / 2)
    assert ndcg_flows(links, 3) == pytest.approx(want, abs=1e-12)
    assert want == pytest.approx(0.6704, abs=1e-4)


def test_ndcg_proportional_and_k_beyond():
    links = [LinkedCluster(i, f"c{i}", rc, i, 2 * rc, 0.0) for i, rc in enumerate([7, 3, 2, 1])]
    assert ndcg_flows(links, 3) == 1.0
    assert ndcg_flows(links, 10) == 1.0
    with pytest.raises(ValueError):
        ndcg_flows(links, 0)
    with pytest.raises(UndefinedMetricError):
        ndcg_flows([LinkedCluster(0, "z", 0, None, 0, math.inf)], 3)


def test_ndcg_brute_force_permutations():
    rng = np.random.default_rng(3)
    for size in range(1, 7):
        raw_counts = [int(x) for x in rng.integers(1, 20, size)]
        for perm in itertools.permutations(range(size)):
            # syn counts realise the permuted ranking
            syn = [0] * size
            for rank, i in enumerate(perm):
                syn[i] = size - rank
            links = [LinkedCluster(i, f"c{i}", raw_counts[i], i, syn[i], 0.0) for i in range(size)]
            rels = [raw_counts[i] for i in perm]
            ideal = sorted(raw_counts, reverse=True)
            for k in (1, 3, 10):
                assert ndcg_flows(links, k) == pytest.approx(dcg_brute(rels, k) / dcg_brute(ideal, k), abs=1e-12)
            if size > 4:
                break


def test_dcg_truncates():
    assert dcg([3, 2, 1], 1) == 3.0
    assert dcg([3, 2, 1], 10) == pytest.approx(3 + 2 / math.log2(3) + 0.5)
