import math

import networkx as nx
import numpy as np
import pytest
from sklearn.metrics import normalized_mutual_info_score

from comtransfer.errors import InvalidArgument
from comtransfer.graph import Graph
from comtransfer.metrics import (
    cs_nmi,
    max_label_affiliation,
    modularity,
    nmi,
    onmi,
    overlap_rate,
    set_f1,
    set_jaccard,
)
from conftest import to_nx

RNG = np.random.default_rng(2)


def lfk_oracle(cover_a, cover_b):
    """Overlapping NMI written directly from the LFK definitions, one pair at a time."""
    n = len(cover_a)

    def comms(cover):
        ids = sorted({c for ls in cover for c in ls})
        return [{v for v in range(n) if c in cover[v]} for c in ids]

    def h(p):
        return 0.0 if p <= 0 else -p * math.log2(p)

    def hx(s):
        p = len(s) / n
        return h(p) + h(1 - p)

    def cond(xs, ys):
        total = 0.0
        for x in xs:
            best = None
            for y in ys:
                p11 = len(x & y) / n
                p10 = len(x - y) / n
                p01 = len(y - x) / n
                p00 = 1 - p11 - p10 - p01
                if h(p11) + h(p00) > h(p01) + h(p10):
                    val = h(p11) + h(p10) + h(p01) + h(p00) - hx(y)
                else:
                    val = hx(x)
                best = val if best is None else min(best, val)
            total += best / hx(x) if hx(x) > 0 else 0.0
        return total / len(xs)

    xa, xb = comms(cover_a), comms(cover_b)
    return 1 - 0.5 * (cond(xa, xb) + cond(xb, xa))


def random_cover(n, k, rng):
    cover = []
    for _ in range(n):
        m = set(rng.choice(k, int(rng.integers(1, 3)), replace=False).tolist())
        cover.append(m)
    return cover


def test_set_scores_hand_examples():
    assert set_f1({1, 2, 3}, {2, 3, 4}) == pytest.approx(2 / 3)
    assert set_jaccard({1, 2, 3}, {2, 3, 4}) == pytest.approx(1 / 2)
    assert set_f1({1}, {2}) == 0.0
    assert set_jaccard([], []) == 1.0


def test_nmi_against_direct_formula_and_sklearn():
    for _ in range(30):
        a = RNG.integers(0, 4, 40)
        b = RNG.integers(0, 3, 40)
        pa = np.bincount(a) / 40
        pb = np.bincount(b) / 40
        mi = 0.0
        for i in range(pa.size):
            for j in range(pb.size):
                pij = np.mean((a == i) & (b == j))
                if pij > 0:
                    mi += pij * np.log(pij / (pa[i] * pb[j]))
        ent = lambda p: -sum(x * np.log(x) for x in p if x > 0)
        want = mi / (0.5 * (ent(pa) + ent(pb)))
        assert nmi(a, b) == pytest.approx(want)
        assert nmi(a, b) == pytest.approx(normalized_mutual_info_score(a, b))


def test_nmi_edge_cases():
    assert nmi([0, 0, 1, 1], [5, 5, 9, 9]) == pytest.approx(1.0)
    assert nmi([0, 0, 0], [0, 0, 0]) == 0.0
    with pytest.raises(InvalidArgument):
        nmi([0, 1], [0, 1, 2])


def test_cs_nmi_uses_indicator_partition():
    assert cs_nmi([0, 1], [0, 1], 4) == pytest.approx(1.0)
    assert cs_nmi([0, 1], [2, 3], 4) == pytest.approx(1.0)  # complement is the same bipartition
    assert cs_nmi([0, 2], [0, 1], 4) == pytest.approx(0.0)


def test_onmi_six_node_example():
    a = [{0}, {0}, {0, 1}, {1}, {1}, {1}]
    b = [{0}, {0}, {0}, {1}, {1}, {1}]
    assert onmi(a, b) == pytest.approx(lfk_oracle(a, b))
    assert 0 < onmi(a, b) < 1
    assert onmi(a, a) == pytest.approx(1.0)


def test_onmi_matches_oracle_on_random_covers():
    for _ in range(40):
        n = int(RNG.integers(6, 25))
        a = random_cover(n, int(RNG.integers(2, 5)), RNG)
        b = random_cover(n, int(RNG.integers(2, 5)), RNG)
        assert onmi(a, b) == pytest.approx(min(max(lfk_oracle(a, b), 0.0), 1.0), abs=1e-9)


def test_onmi_relabel_invariant_and_symmetric():
    a = random_cover(20, 3, RNG)
    b = random_cover(20, 4, RNG)
    relabeled = [{c + 10 for c in ls} for ls in a]
    assert onmi(relabeled, b) == pytest.approx(onmi(a, b))
    assert onmi(a, b) == pytest.approx(onmi(b, a))
    with pytest.raises(InvalidArgument):
        onmi(a, b[:-1])


def test_modularity_two_triangles():
    g = Graph.from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])
    assert modularity(g, [0, 0, 0, 1, 1, 1]) == pytest.approx(0.5)


def test_modularity_singletons_closed_form():
    g = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    deg = np.array([1, 2, 2, 1])
    assert modularity(g, np.arange(4)) == pytest.approx(-np.sum((deg / 6) ** 2))


def test_modularity_matches_networkx():
    for _ in range(10):
        n = 30
        edges = [(u, v) for u in range(n) for v in range(u + 1, n) if RNG.random() < 0.15]
        g = Graph.from_edges(n, edges)
        labels = RNG.integers(0, 4, n)
        parts = [set(np.flatnonzero(labels == c).tolist()) for c in np.unique(labels)]
        assert modularity(g, labels) == pytest.approx(nx.community.modularity(to_nx(g), parts))


def test_overlap_rate_and_mla():
    cover = [{0}, {0, 1}, {1}, {0, 1, 2}, {2}]
    assert overlap_rate(cover) == pytest.approx(0.4)
    assert max_label_affiliation(cover) == 3
    assert overlap_rate([]) == 0.0
