"""Tests for tapstab/graph.py"""
import gzip

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tapstab.errors import ClosureViolationError, EdgeListParseError, TapInputError
from tapstab.graph import (
    DirectedGraph,
    degree_stats,
    generate_ba,
    generate_er,
    graph_digest,
    load_snap_edgelist,
    reach_count,
    reachable_set,
    read_graph_cache,
    remove_closed_set,
    reverse_reachable_set,
    write_graph_cache,
)


# ── construction ──────────────────────────────────────────────────────────────


def test_duplicates_and_self_loops_dropped():
    g = DirectedGraph(3, [0, 0, 1, 2, 2], [1, 1, 1, 0, 2])
    assert g.edge_list() == [(0, 1), (2, 0)]
    assert g.edge_count == 2


def test_edges_sorted_by_source_then_target():
    g = DirectedGraph(4, [3, 0, 0, 2], [0, 3, 1, 1])
    assert g.edge_list() == [(0, 1), (0, 3), (2, 1), (3, 0)]
    assert g.successors(0).tolist() == [1, 3]
    assert sorted(g.predecessors(1).tolist()) == [0, 2]
    assert g.in_edges(1).tolist() == [0, 2]


def test_endpoint_out_of_range():
    with pytest.raises(TapInputError):
        DirectedGraph(2, [0], [2])


def test_arrays_are_read_only(path_graph):
    with pytest.raises(ValueError):
        path_graph.sources[0] = 1


def test_degrees(star_graph):
    assert star_graph.out_degree().tolist() == [3, 0, 0, 0, 0]
    assert star_graph.in_degree().tolist() == [0, 1, 1, 1, 0]


# ── reachability ──────────────────────────────────────────────────────────────


def test_reachable_set_path(path_graph):
    assert reachable_set(path_graph, [0]) == frozenset({0, 1, 2})
    assert reachable_set(path_graph, [2]) == frozenset({2})
    assert reachable_set(path_graph, []) == frozenset()
    assert reach_count(path_graph, [1]) == 2


def test_reverse_reachable_set(path_graph):
    assert reverse_reachable_set(path_graph, [2]) == frozenset({0, 1, 2})
    assert reverse_reachable_set(path_graph, [0]) == frozenset({0})


def test_reachable_set_bad_id(path_graph):
    with pytest.raises(TapInputError):
        reachable_set(path_graph, [3])


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=12),
    data=st.data(),
)
def test_reachability_matches_networkx(n, data):
    edges = data.draw(
        st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=30)
    )
    seeds = data.draw(st.sets(st.integers(0, n - 1), max_size=3))
    g = DirectedGraph(n, [u for u, _ in edges], [v for _, v in edges])
    G = g.to_networkx()
    G.add_nodes_from(range(n))
    expected = set(seeds)
    for s in seeds:
        expected |= nx.descendants(G, s)
    assert reachable_set(g, seeds) == frozenset(expected)


# ── residual graphs ───────────────────────────────────────────────────────────


def test_remove_closed_set(path_graph):
    h = remove_closed_set(path_graph, [2])
    assert h.removed_count == 1
    assert h.live_node_count == 2
    assert h.node_count == 3
    assert reachable_set(h, [0]) == frozenset({0, 1})
    # tombstoned seeds reach nothing
    assert reachable_set(h, [2]) == frozenset()


def test_remove_closed_set_empty_is_identity(path_graph):
    assert remove_closed_set(path_graph, []) is path_graph


def test_remove_non_closed_set_raises(path_graph):
    with pytest.raises(ClosureViolationError):
        remove_closed_set(path_graph, [1])
    # still an AssertionError for callers that treat it as a contract check
    with pytest.raises(AssertionError):
        remove_closed_set(path_graph, [0])


def test_remove_twice_accumulates(star_graph):
    h = remove_closed_set(star_graph, [1])
    h = remove_closed_set(h, [4])
    assert h.is_removed(1) and h.is_removed(4)
    assert reachable_set(h, [0]) == frozenset({0, 2, 3})


# ── generators ────────────────────────────────────────────────────────────────


def test_er_deterministic():
    a = generate_er(100, 0.05, rng_seed=5)
    b = generate_er(100, 0.05, rng_seed=5)
    c = generate_er(100, 0.05, rng_seed=6)
    assert a.edge_list() == b.edge_list()
    assert a.edge_list() != c.edge_list()


def test_er_extremes():
    assert generate_er(10, 0.0, rng_seed=1).edge_count == 0
    assert generate_er(10, 1.0, rng_seed=1).edge_count == 90


def test_er_bad_params():
    with pytest.raises(TapInputError):
        generate_er(0, 0.5, rng_seed=1)
    with pytest.raises(TapInputError):
        generate_er(10, 1.5, rng_seed=1)


def test_er_density_close_to_p():
    g = generate_er(1000, 2 / 1000, rng_seed=3)
    # expected m = n (n - 1) p = 1998
    assert 1700 < g.edge_count < 2300


def test_ba_small_instance():
    g = generate_ba(3, 1, rng_seed=0)
    assert g.node_count == 3
    assert g.edge_count == 4
    # every attachment stored in both directions
    assert set(g.edge_list()) == {(v, u) for u, v in g.edge_list()}


def test_ba_bad_params():
    with pytest.raises(TapInputError):
        generate_ba(2, 2, rng_seed=0)
    with pytest.raises(TapInputError):
        generate_ba(10, 0, rng_seed=0)


@pytest.mark.slow
def test_ba_degree_tail_exponent():
    from scipy import stats

    g = generate_ba(10_000, 1, rng_seed=12)
    deg = g.out_degree()
    ks = np.arange(4, 41)
    ccdf = np.array([(deg >= k).mean() for k in ks])
    slope = stats.linregress(np.log(ks), np.log(ccdf)).slope
    # density exponent is the CCDF slope minus one
    assert -3.5 <= slope - 1.0 <= -2.5


# ── SNAP ingestion ────────────────────────────────────────────────────────────


def test_load_snap_edgelist(tmp_path):
    f = tmp_path / "edges.txt"
    f.write_text("# Directed graph\n# FromNodeId\tToNodeId\n10\t20\n20 30\n30 30\n\n")
    g, id_map = load_snap_edgelist(f)
    assert id_map.tolist() == [10, 20, 30]
    assert g.edge_list() == [(0, 1), (1, 2)]


def test_load_snap_symmetrize(tmp_path):
    f = tmp_path / "edges.txt"
    f.write_text("1 2\n2 3\n")
    g, _ = load_snap_edgelist(f, symmetrize=True)
    assert g.edge_count == 4


def test_load_snap_gzip(tmp_path):
    f = tmp_path / "edges.txt.gz"
    with gzip.open(f, "wt") as out:
        out.write("0 1\n1 2\n")
    g, _ = load_snap_edgelist(f)
    assert g.edge_count == 2


def test_load_snap_malformed_line(tmp_path):
    f = tmp_path / "edges.txt"
    f.write_text("# header\n1 2\n1 2 3\n")
    with pytest.raises(EdgeListParseError) as exc_info:
        load_snap_edgelist(f)
    assert exc_info.value.line_number == 3
    assert isinstance(exc_info.value, TapInputError)


def test_load_snap_missing_file(tmp_path):
    with pytest.raises(TapInputError):
        load_snap_edgelist(tmp_path / "nope.txt")


# ── binary cache ──────────────────────────────────────────────────────────────


def test_graph_cache_roundtrip(tmp_path, small_er):
    path = write_graph_cache(small_er, tmp_path / "g.tapg")
    back = read_graph_cache(path)
    assert back.node_count == small_er.node_count
    assert back.edge_list() == small_er.edge_list()
    assert graph_digest(back) == graph_digest(small_er)


def test_graph_cache_refuses_residual(tmp_path, path_graph):
    h = remove_closed_set(path_graph, [2])
    with pytest.raises(TapInputError):
        write_graph_cache(h, tmp_path / "h.tapg")


def test_graph_cache_bad_magic(tmp_path):
    f = tmp_path / "bad.tapg"
    f.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(TapInputError):
        read_graph_cache(f)


def test_graph_cache_truncated(tmp_path, small_er):
    path = write_graph_cache(small_er, tmp_path / "g.tapg")
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(TapInputError):
        read_graph_cache(path)


def test_digest_changes_with_edges(path_graph):
    other = DirectedGraph(3, [0, 2], [1, 1])
    assert graph_digest(path_graph) != graph_digest(other)


def test_degree_stats(star_graph):
    stats = degree_stats(star_graph)
    assert stats["n"] == 5
    assert stats["m"] == 3
    assert stats["max_out_degree"] == 3
    assert stats["max_in_degree"] == 1
    assert stats["mean_out_degree"] == pytest.approx(0.6)
