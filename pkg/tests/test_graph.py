import numpy as np
import pytest
from hypothesis import given, strategies as st

from grace.graph import GraphLoadError, build_hypergraph, load_relation_edges


def test_empty_edges_zero_degrees():
    g = build_hypergraph([], n_stocks=4, n_factors=2, n_relations=3)
    assert np.array_equal(g.degrees, np.zeros(4))


def test_single_edge_degrees_and_vector():
    g = build_hypergraph([(0, 1, 0)], n_stocks=3, n_factors=2, n_relations=2)
    assert g.degrees[0] == 1 and g.degrees[1] == 1 and g.degrees[2] == 0
    vec = g.relation_vector(0, 1)
    assert vec[0] == 1 and np.all(vec[1:] == 0)


def test_fully_connected_two_relations():
    edges = [(i, j, m) for m in range(2) for i in range(3) for j in range(i + 1, 3)]
    g = build_hypergraph(edges, n_stocks=3, n_factors=1, n_relations=2)
    assert np.array_equal(g.degrees, np.full(3, 4.0))   # 2 peers x 2 relations


def test_relation_vector_factor_position():
    g = build_hypergraph([], n_stocks=4, n_factors=3, n_relations=2)
    vec = g.relation_vector(1, 4 + 2)    # stock 1 vs factor vertex N+2
    expect = np.zeros(5)
    expect[2 + 2] = 1.0
    assert np.array_equal(vec, expect)


def test_relation_vector_unrelated_stocks_zero():
    g = build_hypergraph([(0, 1, 0)], n_stocks=4, n_factors=2, n_relations=2)
    assert np.all(g.relation_vector(2, 3) == 0)


def test_relation_vector_multiple_relations():
    edges = [(0, 1, 0), (0, 1, 3)]
    g = build_hypergraph(edges, n_stocks=3, n_factors=1, n_relations=4)
    vec = g.relation_vector(0, 1)
    assert np.array_equal(vec[:4], [1, 0, 0, 1])


def test_relation_vector_factor_pair_zero():
    g = build_hypergraph([], n_stocks=2, n_factors=2, n_relations=1)
    assert np.all(g.relation_vector(2, 3) == 0)


def test_relation_vector_symmetry():
    rng = np.random.default_rng(0)
    edges = [(int(a), int(b), int(m)) for a, b, m in
             zip(rng.integers(0, 6, 15), rng.integers(0, 6, 15), rng.integers(0, 3, 15))
             if a != b]
    g = build_hypergraph(edges, n_stocks=6, n_factors=2, n_relations=3)
    for i in range(6):
        for j in range(6):
            if i != j:
                assert np.array_equal(g.relation_vector(i, j), g.relation_vector(j, i))


def test_errors_on_bad_edges():
    with pytest.raises(GraphLoadError, match="self-loop"):
        build_hypergraph([(1, 1, 0)], 3, 1, n_relations=1)
    with pytest.raises(GraphLoadError, match="out of range"):
        build_hypergraph([(0, 5, 0)], 3, 1, n_relations=1)
    with pytest.raises(GraphLoadError, match="relation id"):
        build_hypergraph([(0, 1, 7)], 3, 1, n_relations=1)


class TestCollapse:
    def test_two_neighbors_half_weights(self):
        g = build_hypergraph([(0, 1, 0), (0, 2, 0)], 3, 1, n_relations=1)
        w = g.collapse()
        assert w[0, 1] == pytest.approx(0.5) and w[0, 2] == pytest.approx(0.5)

    def test_isolated_zero_row(self):
        g = build_hypergraph([(0, 1, 0)], 3, 1, n_relations=1)
        assert np.all(g.collapse()[2] == 0)

    def test_chain(self):
        g = build_hypergraph([(0, 1, 0), (1, 2, 0)], 3, 1, n_relations=1)
        w = g.collapse()
        assert w[1, 0] == pytest.approx(0.5) and w[1, 2] == pytest.approx(0.5)
        assert w[0, 1] == pytest.approx(1.0) and w[2, 1] == pytest.approx(1.0)

    def test_rows_sum_zero_or_one(self):
        rng = np.random.default_rng(1)
        edges = [(int(a), int(b), 0) for a, b in
                 zip(rng.integers(0, 8, 12), rng.integers(0, 8, 12)) if a != b]
        g = build_hypergraph(edges, 8, 1, n_relations=1)
        sums = g.collapse().sum(axis=1)
        assert all(s == pytest.approx(0.0) or s == pytest.approx(1.0) for s in sums)

    def test_any_relation_counts_once(self):
        # same pair linked under two relations still collapses to one edge
        g = build_hypergraph([(0, 1, 0), (0, 1, 1)], 3, 1, n_relations=2)
        w = g.collapse()
        assert w[0, 1] == pytest.approx(1.0)


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(0, 2)),
                max_size=20))
def test_handshake_per_relation(raw_edges):
    edges = [(i, j, m) for i, j, m in raw_edges if i != j]
    g = build_hypergraph(edges, 6, 2, n_relations=3)
    for m in range(3):
        per_rel_deg = g.adjacency[m].sum()
        assert per_rel_deg == 2 * len(g.edge_lists[m])


def test_include_factors_changes_only_factor_coordinates():
    edges = [(0, 1, 0), (1, 2, 1)]
    with_f = build_hypergraph(edges, 4, 2, n_relations=2, include_factors=True)
    without = build_hypergraph(edges, 4, 2, n_relations=2, include_factors=False)
    for i in range(4):
        for j in range(4):
            if i == j:
                continue
            a, b = with_f.relation_vector(i, j), without.relation_vector(i, j)
            assert np.array_equal(a, b)
    assert np.all(without.relation_vector(0, 4) == 0)
    assert with_f.relation_vector(0, 4)[2] == 1
    assert without.n_contributors == 4 and with_f.n_contributors == 6


def test_attention_constants_shapes():
    g = build_hypergraph([(0, 1, 0)], 3, 2, n_relations=2)
    stack = g.attention_relation_stack()
    assert stack.shape == (4, 3, 5)
    assert stack[2, :, 3].tolist() == [1, 1, 1]   # factor 0 column
    scale = g.contributor_scale()
    assert scale[2] == 1.0                        # isolated stock keeps divisor 1
    assert scale[3] == pytest.approx(1 / 3)


def test_load_relation_edges_roundtrip(tmp_path):
    p = tmp_path / "rel.csv"
    p.write_text("# prov\ni,j,relation_id\n0,1,0\n2,3,1\n")
    assert load_relation_edges(str(p)) == [(0, 1, 0), (2, 3, 1)]
