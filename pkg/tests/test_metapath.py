import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from hinattn.graph import GraphFormatError, Schema
from hinattn.metapath import (
    BudgetExceeded, MetaPath, bruteforce_matrix, cached_commuting_matrix, commuting_matrix,
    enumerate_bruteforce, neighbor_sets, normalize_rows, parse_metapath,
)
from helpers import make_graph, random_hin, random_metapath, toy_two_authors

DBLP = Schema.infer(["A", "P", "V", "T"], [("A", "w", "P"), ("P", "c", "P"),
                                           ("P", "pub", "V"), ("P", "has", "T")])
IMDB = Schema.infer(["M", "A", "D", "U"], [("M", "a", "A"), ("M", "d", "D"), ("M", "r", "U")])


def test_parse_forms():
    assert parse_metapath("APA", DBLP, "A").types == ("A", "P", "A")
    assert parse_metapath("A,P,V,P,A", DBLP, "A").name == "APVPA"
    assert parse_metapath("APPA", DBLP, "A").types == ("A", "P", "P", "A")
    assert parse_metapath("MAM", IMDB, "M").types == ("M", "A", "M")


@pytest.mark.parametrize("spec, msg", [
    ("AP", "start and end"),
    ("AVA", "no schema edge"),
    ("AXA", "unknown node type"),
    ("A", "at least two"),
])
def test_parse_errors(spec, msg):
    with pytest.raises(GraphFormatError, match=msg):
        parse_metapath(spec, DBLP, "A")


def test_toy_counts():
    g = toy_two_authors()
    m = commuting_matrix(g, MetaPath(("A", "P", "A"))).toarray()
    np.testing.assert_array_equal(m, [[1, 1], [1, 1]])
    assert enumerate_bruteforce(g, MetaPath(("A", "P", "A")), 0, 1) == 1
    assert enumerate_bruteforce(g, MetaPath(("A", "P", "A")), 0, 0) == 1
    assert neighbor_sets(m)[0].tolist() == [1]


def test_no_content_nodes_gives_zero_matrix():
    g = make_graph([("a1", "A"), ("a2", "A"), ("v1", "V")], [("a1", "v1", "x")])
    g.schema = Schema.infer(["A", "V", "P"], [("A", "x", "V"), ("A", "w", "P")])
    m = commuting_matrix(g, MetaPath(("A", "P", "A")))
    assert m.shape == (2, 2) and m.nnz == 0


def test_disconnected_pair_zero():
    g = make_graph([("a1", "A"), ("a2", "A"), ("p1", "P"), ("p2", "P")],
                   [("a1", "p1", "w"), ("a2", "p2", "w")])
    assert enumerate_bruteforce(g, MetaPath(("A", "P", "A")), 0, 1) == 0


def test_budget_guard():
    nodes = [(f"a{i}", "A") for i in range(20)] + [(f"p{i}", "P") for i in range(20)]
    edges = [(f"a{i}", f"p{j}", "w") for i in range(20) for j in range(20)]
    g = make_graph(nodes, edges)
    with pytest.raises(BudgetExceeded):
        enumerate_bruteforce(g, MetaPath(("A", "P", "A", "P", "A")), 0, 1, budget=1000)


def test_self_type_edges_and_self_loop_consistent():
    g = make_graph([("a", "A"), ("p", "P"), ("q", "P")],
                   [("a", "p", "w"), ("p", "q", "c"), ("q", "q", "c"), ("a", "q", "w")])
    path = MetaPath(("A", "P", "P", "A"))
    assert commuting_matrix(g, path).toarray().tolist() == bruteforce_matrix(g, path).tolist()


@pytest.mark.parametrize("seed", range(6))
def test_random_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    g = random_hin(rng, n_nodes=30, n_types=2)
    seq = random_metapath(rng, g, 3)
    path = MetaPath(tuple(seq))
    np.testing.assert_array_equal(commuting_matrix(g, path).toarray(), bruteforce_matrix(g, path))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(4, 40), k=st.integers(2, 4),
       length=st.integers(3, 5))
def test_commuting_equals_bruteforce_property(seed, n, k, length):
    rng = np.random.default_rng(seed)
    g = random_hin(rng, n_nodes=max(n, k), n_types=k, p_edge=0.12)
    seq = random_metapath(rng, g, length)
    if seq is None:
        return
    path = MetaPath(tuple(seq))
    counts = commuting_matrix(g, path)
    np.testing.assert_array_equal(counts.toarray(), bruteforce_matrix(g, path))
    if path.is_palindrome():
        assert (counts != counts.T).nnz == 0


def test_permutation_equivariance():
    rng = np.random.default_rng(11)
    g = random_hin(rng, n_nodes=30, n_types=2, p_edge=0.2)
    path = MetaPath(("A", "B", "A"))
    base = commuting_matrix(g, path).toarray()
    perm = rng.permutation(g.n_nodes)
    nodes = [(g.node_ids[i], g.node_types[i]) for i in perm]
    edges = [(g.node_ids[s], g.node_ids[d], e) for (s, d), e in zip(g.edges, g.edge_types)]
    h = make_graph(nodes, edges)
    # target order in h, expressed as positions in g's target order
    g_targets = list(g.nodes_of_type("A"))
    sigma = [g_targets.index(perm[i]) for i in h.nodes_of_type("A")]
    np.testing.assert_array_equal(commuting_matrix(h, path).toarray(), base[np.ix_(sigma, sigma)])


def test_overflow_detected():
    # one A node linked to many P nodes, long path: counts grow as deg^k
    nodes = [("a", "A")] + [(f"p{i}", "P") for i in range(3000)]
    edges = [("a", f"p{i}", "w") for i in range(3000)] * 1
    g = make_graph(nodes, edges)
    path = MetaPath(("A",) + ("P", "A") * 6)
    with pytest.raises(OverflowError):
        commuting_matrix(g, path)


@pytest.mark.parametrize("row, expected", [
    ([2, 2, 0], [0.5, 0.5, 0]),
    ([0, 0, 0], [0, 0, 0]),
    ([1, 1, 1, 1], [0.25] * 4),
])
def test_normalize_rows(row, expected):
    out = normalize_rows(sp.csr_matrix(np.array([row])))
    np.testing.assert_allclose(out.toarray()[0], expected, atol=0)


def test_normalize_idempotent_and_sums():
    rng = np.random.default_rng(0)
    m = sp.random(20, 20, density=0.2, random_state=1, data_rvs=lambda n: rng.integers(1, 9, n))
    a = normalize_rows(m)
    sums = np.asarray(a.sum(axis=1)).ravel()
    assert np.all((np.abs(sums - 1) < 1e-12) | (sums == 0))
    np.testing.assert_allclose(normalize_rows(a).toarray(), a.toarray(), atol=1e-15)


def test_neighbor_sets():
    full = np.ones((4, 4), dtype=np.int64)
    assert all(len(n) == 3 for n in neighbor_sets(full))
    iso = np.array([[2, 0], [0, 0]])
    assert [n.tolist() for n in neighbor_sets(iso)] == [[], []]


def test_cache_sidecar(tmp_path):
    g = toy_two_authors()
    path = MetaPath(("A", "P", "A"))
    a = cached_commuting_matrix(g, path, tmp_path)
    files = list(tmp_path.iterdir())
    assert len(files) == 1
    b = cached_commuting_matrix(g, path, tmp_path)
    assert (a != b).nnz == 0
