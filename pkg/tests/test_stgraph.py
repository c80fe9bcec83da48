import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pavecast import stgraph as sg


def rand_nodes(rng, n, extent=0.01, span=100.0, init_count=0):
    """Random time-sorted node metadata with ids equal to positions."""
    ts = np.sort(rng.uniform(0, span, n))
    return [sg.GraphNode(node_id=i,
                         lon=121.0 + float(rng.uniform(-extent, extent)),
                         lat=31.0 + float(rng.uniform(-extent, extent)),
                         t_raw=float(ts[i]), t_norm=float(ts[i] / span),
                         is_init=(i < init_count))
            for i in range(n)]


def brute_force_parents(node, candidates, config):
    """O(n log n) reference: full sort for ranked edges, linear filter for proximity."""
    scored = sorted(
        ((sg.location_distance((node.lon, node.lat), (c.lon, c.lat)) / config.l_res_m
          + abs(node.t_raw - c.t_raw) / config.t_res_days, c.node_id)
         for c in candidates))
    top = [nid for _, nid in scored[:config.top_k]]
    hard = [c.node_id for c in candidates
            if sg.location_distance((node.lon, node.lat), (c.lon, c.lat)) <= config.l_res_m
            and abs(node.t_raw - c.t_raw) <= config.t_res_days]
    return set(top) | set(hard), top


def brute_force_graph_edges(nodes, init_count, config):
    """Edge set over the final node list, candidates restricted to temporal order."""
    edges = set()
    for i, nd in enumerate(nodes):
        if i < init_count:
            for j in range(init_count):
                if j == i:
                    continue
                other = nodes[j]
                if (sg.location_distance((nd.lon, nd.lat), (other.lon, other.lat))
                        <= config.l_res_m
                        and abs(nd.t_raw - other.t_raw) <= config.t_res_days):
                    edges.add((other.node_id, nd.node_id))
        else:
            parent_ids, _ = brute_force_parents(nd, nodes[:i], config)
            edges.update((p, nd.node_id) for p in parent_ids)
    return edges


def edge_set(graph):
    return {(e.parent, nd.node_id)
            for nd, plist in zip(graph.nodes, graph.parents) for e in plist}


# ---------------------------------------------------------------------------
# location_distance


def test_distance_identical_points():
    assert sg.location_distance((121.0, 31.0), (121.0, 31.0)) == 0.0


def test_distance_symmetric():
    a, b = (121.002, 31.01), (121.03, 30.98)
    assert sg.location_distance(a, b) == sg.location_distance(b, a)


def test_distance_hand_value():
    # one hundredth of a degree of longitude at 31 deg N
    d = sg.location_distance((121.0, 31.0), (121.01, 31.0))
    assert d == pytest.approx(953.1, abs=0.2)


def test_distance_nonfinite():
    with pytest.raises(ArithmeticError):
        sg.location_distance((float("nan"), 31.0), (121.0, 31.0))


# ---------------------------------------------------------------------------
# hard_edges


def test_hard_edge_trivial_inclusion():
    cfg = sg.GraphConfig()
    node = sg.GraphNode(5, 121.0, 31.0, 10.0, 0.1, False)
    cand = sg.GraphNode(2, 121.0, 31.0, 10.0, 0.1, False)
    edges = sg.hard_edges(node, [cand], cfg)
    assert [e.parent for e in edges] == [2]
    assert edges[0].dist_m == 0.0 and edges[0].dt_days == 0.0


def test_hard_edge_threshold_is_inclusive_and_strict_beyond():
    cfg = sg.GraphConfig(l_res_m=200.0, t_res_days=14.0)
    node = sg.GraphNode(1, 121.0, 31.0, 20.0, 0.2, False)
    # ~0.0021 deg of longitude is just over 200 m at 31 N
    beyond = sg.GraphNode(0, 121.0021, 31.0, 20.0, 0.2, False)
    assert sg.location_distance((121.0, 31.0), (121.0021, 31.0)) > 200.0
    assert sg.hard_edges(node, [beyond], cfg) == []
    at_time_limit = sg.GraphNode(0, 121.0, 31.0, 6.0, 0.06, False)
    assert len(sg.hard_edges(node, [at_time_limit], cfg)) == 1


def test_hard_edges_match_brute_force_filter():
    rng = np.random.default_rng(17)
    cfg = sg.GraphConfig(l_res_m=400.0, t_res_days=10.0)
    nodes = rand_nodes(rng, 31, extent=0.006, span=60.0)
    target, candidates = nodes[-1], nodes[:-1]
    got = {e.parent for e in sg.hard_edges(target, candidates, cfg)}
    want = {c.node_id for c in candidates
            if sg.location_distance((target.lon, target.lat), (c.lon, c.lat)) <= cfg.l_res_m
            and abs(target.t_raw - c.t_raw) <= cfg.t_res_days}
    assert got == want and got  # non-degenerate instance


# ---------------------------------------------------------------------------
# top_edges


def test_top_returns_all_when_fewer_than_k():
    cfg = sg.GraphConfig(top_k=5)
    rng = np.random.default_rng(3)
    nodes = rand_nodes(rng, 4)
    edges = sg.top_edges(nodes[-1], nodes[:-1], cfg)
    assert len(edges) == 3


def test_top_tie_broken_by_lower_id():
    cfg = sg.GraphConfig(top_k=1)
    node = sg.GraphNode(9, 121.0, 31.0, 50.0, 0.5, False)
    twin_a = sg.GraphNode(4, 121.001, 31.0, 40.0, 0.4, False)
    twin_b = sg.GraphNode(2, 121.001, 31.0, 40.0, 0.4, False)
    edges = sg.top_edges(node, [twin_a, twin_b], cfg)
    assert [e.parent for e in edges] == [2]


def test_top_matches_sorted_oracle_prefix():
    rng = np.random.default_rng(5)
    cfg = sg.GraphConfig(top_k=5)
    nodes = rand_nodes(rng, 13)
    target, candidates = nodes[-1], nodes[:-1]
    got = [e.parent for e in sg.top_edges(target, candidates, cfg)]
    _, oracle_top = brute_force_parents(target, candidates, cfg)
    assert got == oracle_top


# ---------------------------------------------------------------------------
# init graph


def test_init_single_node():
    g = sg.build_init_graph(rand_nodes(np.random.default_rng(0), 1, init_count=1),
                            sg.GraphConfig())
    assert g.n == 1 and g.edge_count() == 0


def test_init_colocated_pair_mutually_visible():
    a = sg.GraphNode(0, 121.0, 31.0, 5.0, 0.0, True)
    b = sg.GraphNode(1, 121.0, 31.0, 5.0, 0.0, True)
    g = sg.build_init_graph([a, b], sg.GraphConfig())
    assert edge_set(g) == {(0, 1), (1, 0)}
    assert all(e.origin == "init" for plist in g.parents for e in plist)


def test_init_matches_symmetric_oracle():
    rng = np.random.default_rng(21)
    cfg = sg.GraphConfig(l_res_m=500.0, t_res_days=30.0)
    nodes = rand_nodes(rng, 10, extent=0.004, span=40.0, init_count=10)
    g = sg.build_init_graph(nodes, cfg)
    assert edge_set(g) == brute_force_graph_edges(nodes, 10, cfg)


def test_init_empty_rejected():
    with pytest.raises(sg.ConstructionError):
        sg.build_init_graph([], sg.GraphConfig())


# ---------------------------------------------------------------------------
# expand


def test_expand_no_parents_when_k_zero_and_far():
    cfg = sg.GraphConfig(top_k=0)
    base = sg.GraphNode(0, 121.0, 31.0, 0.0, 0.0, True)
    g = sg.build_init_graph([base], cfg)
    far = sg.GraphNode(1, 122.0, 32.0, 90.0, 0.9, False)
    sg.expand(g, far, cfg)
    assert g.parents[1] == []


def test_expand_in_degree_min_k_prior():
    cfg = sg.GraphConfig(top_k=5)
    rng = np.random.default_rng(8)
    nodes = rand_nodes(rng, 4, extent=0.5, span=400.0, init_count=1)
    g = sg.build_init_graph(nodes[:1], cfg)
    for nd in nodes[1:]:
        sg.expand(g, nd, cfg)
    assert len(g.parents[3]) == 3  # min(K=5, 3 prior)


def test_expand_sequence_matches_batch_oracle():
    rng = np.random.default_rng(13)
    cfg = sg.GraphConfig(l_res_m=300.0, t_res_days=12.0, top_k=4)
    nodes = rand_nodes(rng, 50, extent=0.004, span=90.0, init_count=5)
    g = sg.build_graph(nodes, 5, cfg)
    assert edge_set(g) == brute_force_graph_edges(nodes, 5, cfg)


def test_expand_rejects_out_of_order_and_duplicate():
    cfg = sg.GraphConfig()
    nodes = rand_nodes(np.random.default_rng(2), 5, init_count=1)
    g = sg.build_graph(nodes, 1, cfg)
    stale = sg.GraphNode(99, 121.0, 31.0, nodes[2].t_raw - 1.0, 0.0, False)
    with pytest.raises(sg.TemporalOrderError):
        sg.expand(g, stale, cfg)
    dup = sg.GraphNode(3, 121.0, 31.0, 1e9, 1.0, False)
    with pytest.raises(sg.DuplicateIdError):
        sg.expand(g, dup, cfg)


def test_combined_parents_equals_top_union_hard():
    rng = np.random.default_rng(31)
    cfg = sg.GraphConfig(l_res_m=600.0, t_res_days=25.0, top_k=3)
    for _ in range(20):
        nodes = rand_nodes(rng, 25, extent=0.005, span=70.0)
        target, cands = nodes[-1], nodes[:-1]
        got = sg.combined_parents(target, cands, cfg)
        ids = [e.parent for e in got]
        assert len(ids) == len(set(ids))  # deduplicated
        want, _ = brute_force_parents(target, cands, cfg)
        assert set(ids) == want


# ---------------------------------------------------------------------------
# invariants


@settings(deadline=None, max_examples=20)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_temporal_soundness_and_top_guarantee(seed, k):
    rng = np.random.default_rng(seed)
    cfg = sg.GraphConfig(top_k=k)
    n = int(rng.integers(6, 40))
    init_count = max(1, n // 10)
    nodes = rand_nodes(rng, n, init_count=init_count)
    g = sg.build_graph(nodes, init_count, cfg)
    for nd, plist in zip(g.nodes, g.parents):
        if nd.is_init:
            continue
        for e in plist:
            assert g.nodes[e.parent].t_raw <= nd.t_raw
        assert len(plist) >= min(k, nd.node_id)


def test_k_zero_edges_subset_of_k_five():
    rng = np.random.default_rng(77)
    nodes = rand_nodes(rng, 60, extent=0.003, span=50.0, init_count=6)
    g0 = sg.build_graph(nodes, 6, sg.GraphConfig(top_k=0))
    g5 = sg.build_graph(nodes, 6, sg.GraphConfig(top_k=5))
    assert edge_set(g0) <= edge_set(g5)


def test_incremental_equals_batch_on_200_nodes():
    rng = np.random.default_rng(200)
    cfg = sg.GraphConfig(l_res_m=250.0, t_res_days=10.0, top_k=5)
    nodes = rand_nodes(rng, 200, extent=0.01, span=150.0, init_count=20)
    g = sg.build_graph(nodes, 20, cfg)
    assert edge_set(g) == brute_force_graph_edges(nodes, 20, cfg)


def test_additional_mode_still_meets_top_guarantee():
    rng = np.random.default_rng(55)
    cfg = sg.GraphConfig(top_k=3, top_mode="additional", l_res_m=800.0, t_res_days=40.0)
    nodes = rand_nodes(rng, 40, extent=0.004, span=60.0, init_count=4)
    g = sg.build_graph(nodes, 4, cfg)
    merged = sg.build_graph(nodes, 4, sg.GraphConfig(top_k=3))
    for nd, plist in zip(g.nodes, g.parents):
        if not nd.is_init:
            assert len(plist) >= min(cfg.top_k, nd.node_id)
    assert edge_set(merged) <= edge_set(g) | edge_set(merged)


# ---------------------------------------------------------------------------
# annotations and serialization


def test_annotations_match_recomputation():
    rng = np.random.default_rng(4)
    cfg = sg.GraphConfig(top_k=3)
    nodes = rand_nodes(rng, 10, init_count=2)
    g = sg.build_graph(nodes, 2, cfg)
    for parent, child, dt_norm, dist in sg.edge_annotations(g):
        assert dt_norm == abs(nodes[child].t_norm - nodes[parent].t_norm)
        assert dist == pytest.approx(sg.location_distance(
            (nodes[child].lon, nodes[child].lat),
            (nodes[parent].lon, nodes[parent].lat)), rel=1e-12)


def test_parent_at_half_span_gives_half_dt_norm():
    span = 80.0
    a = sg.GraphNode(0, 121.0, 31.0, 0.0, 0.0, True)
    b = sg.GraphNode(1, 121.0, 31.0, span / 2, 0.5, False)
    g = sg.build_init_graph([a], sg.GraphConfig(t_res_days=span))
    sg.expand(g, b, sg.GraphConfig(t_res_days=span))
    annos = sg.edge_annotations(g)
    assert annos and annos[0][2] == 0.5


def test_graph_json_roundtrip(tmp_path):
    rng = np.random.default_rng(14)
    nodes = rand_nodes(rng, 12, init_count=2)
    g = sg.build_graph(nodes, 2, sg.GraphConfig(top_k=2))
    path = tmp_path / "graph.json"
    sg.save_graph_json(g, path)
    back = sg.load_graph_json(path)
    assert back.n == g.n and back.init_count == g.init_count
    assert edge_set(back) == edge_set(g)
    origins = {(e.parent, nd.node_id): e.origin
               for nd, pl in zip(g.nodes, g.parents) for e in pl}
    origins_back = {(e.parent, nd.node_id): e.origin
                    for nd, pl in zip(back.nodes, back.parents) for e in pl}
    assert origins == origins_back
