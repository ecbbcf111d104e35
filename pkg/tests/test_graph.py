from fractions import Fraction

import networkx as nx
import numpy as np
import pytest

from comtransfer.errors import InvalidArgument
from comtransfer.graph import (
    Graph,
    build_aug_tokens,
    conductance,
    khop_neighborhood,
    normalize_adjacency,
    propagate,
    sample_non_edges,
    select_local_hop,
    select_local_hops,
)
from conftest import EXAMPLE_EDGES, all_subsets, brute_hops, fraction_conductance, random_graph, to_nx


def test_from_edges_symmetrizes_and_dedups():
    g = Graph.from_edges(4, [(0, 1), (1, 0), (0, 1), (2, 2), (2, 3)])
    assert g.n_edges == 2
    assert g.edge_array().tolist() == [[0, 1], [2, 3]]
    assert g.has_edge(1, 0) and not g.has_edge(0, 2)
    assert g.degrees.tolist() == [1, 1, 1, 1]


@pytest.mark.parametrize("edges", [[(0, 4)], [(-1, 0)]])
def test_from_edges_rejects_out_of_range(edges):
    with pytest.raises(InvalidArgument):
        Graph.from_edges(4, edges)


def test_from_edges_rejects_bad_feature_rows():
    with pytest.raises(InvalidArgument):
        Graph.from_edges(3, [(0, 1)], np.zeros((2, 4)))


def test_example_conductance(example_graph):
    one_hop = khop_neighborhood(example_graph, 0, 1)
    assert one_hop.tolist() == [0, 1, 2, 3, 4]
    assert conductance(example_graph, one_hop) == pytest.approx(1 / 3, abs=0)
    assert conductance(example_graph, khop_neighborhood(example_graph, 0, 2)) == 1.0
    assert select_local_hop(example_graph, 0, 2) == 1


def test_conductance_sentinels(example_graph):
    assert conductance(example_graph, []) == 1.0
    assert conductance(example_graph, range(8)) == 1.0
    edgeless = Graph.from_edges(3, [])
    assert conductance(edgeless, [0]) == 1.0


def test_conductance_matches_rational_bruteforce():
    rng = np.random.default_rng(1)
    for _ in range(5):
        g = random_graph(8, 0.4, rng)
        edges = [tuple(e) for e in g.edge_array()]
        for s in all_subsets(8):
            assert conductance(g, list(s)) == float(fraction_conductance(edges, 8, s))


def test_conductance_matches_networkx():
    rng = np.random.default_rng(2)
    g = random_graph(12, 0.3, rng)
    G = to_nx(g)
    for s in ([0, 1, 2], [3, 5, 7, 9], list(range(6))):
        vol = sum(d for _, d in G.degree(s))
        if 0 < vol < 2 * G.number_of_edges():
            assert conductance(g, s) == pytest.approx(nx.conductance(G, s))


def test_khop_matches_networkx():
    rng = np.random.default_rng(3)
    g = random_graph(30, 0.08, rng)
    G = to_nx(g)
    for v in range(0, 30, 7):
        for i in range(4):
            want = sorted(nx.single_source_shortest_path_length(G, v, cutoff=i))
            assert khop_neighborhood(g, v, i).tolist() == want


def test_hop_selection_matches_exhaustive():
    rng = np.random.default_rng(4)
    for n in (10, 25, 40):
        g = random_graph(n, 3.0 / n, rng)
        assert select_local_hops(g, 5).tolist() == brute_hops(g, 5).tolist()


def test_example_hops(example_graph):
    assert select_local_hops(example_graph, 2).tolist() == [1, 0, 0, 2, 2, 1, 2, 2]


def test_normalize_adjacency_dense_formula():
    rng = np.random.default_rng(5)
    g = random_graph(10, 0.3, rng)
    a = g.adjacency().toarray()
    d = a.sum(1)
    inv = np.where(d > 0, 1 / np.sqrt(np.where(d > 0, d, 1)), 0)
    assert np.allclose(normalize_adjacency(g).toarray(), inv[:, None] * a * inv[None, :])


def test_propagate_powers():
    rng = np.random.default_rng(6)
    g = random_graph(10, 0.3, rng)
    stack = propagate(g, 3)
    a = normalize_adjacency(g).toarray()
    x = g.features.astype(np.float64)
    assert stack.h_max == 3
    assert np.allclose(stack.hops[3], a @ a @ a @ x, atol=1e-5)
    with pytest.raises(InvalidArgument):
        propagate(g, -1)


def test_aug_tokens_mask_and_padding():
    rng = np.random.default_rng(7)
    g = random_graph(6, 0.5, rng)
    stack = propagate(g, 2)
    hops = np.array([0, 1, 2, 2, 1, 0])
    aug = build_aug_tokens(stack, hops)
    assert aug.tokens.shape == (6, 5, 3)
    assert aug.mask[:, :3].sum(1).tolist() == (hops + 1).tolist()
    assert not aug.mask[:, 3:].any()
    assert np.all(aug.tokens[~aug.mask] == 0)
    with pytest.raises(InvalidArgument):
        build_aug_tokens(stack, [3] * 6)


def test_sample_non_edges_absent_from_graph():
    rng = np.random.default_rng(8)
    g = random_graph(20, 0.3, rng)
    pairs = sample_non_edges(g, 200, np.random.default_rng(0))
    assert pairs.shape == (200, 2)
    assert all(u != v and not g.has_edge(u, v) for u, v in pairs)
    complete = Graph.from_edges(4, [(i, j) for i in range(4) for j in range(i + 1, 4)])
    assert sample_non_edges(complete, 10, rng).shape == (0, 2)
