"""Hypergraph matcher: degree stats, nibble output validity, tiny oracles."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blowpack.hypermatch import (
    Hypergraph,
    TupleWeight,
    brute_force_best_matching,
    find_matching,
    max_codegree,
    max_degree,
)
from blowpack.rng import derive_rng

FANO = [
    [0, 1, 2], [0, 3, 4], [0, 5, 6],
    [1, 3, 5], [1, 4, 6], [2, 3, 6], [2, 4, 5],
]


def disjoint_edges(n):
    return Hypergraph.from_lists(3 * n, [[3 * i, 3 * i + 1, 3 * i + 2]
                                         for i in range(n)])


def complete_3_uniform(n):
    from itertools import combinations

    return Hypergraph.from_lists(n, [list(c) for c in combinations(range(n), 3)])


class TestDegrees:
    def test_disjoint_edges(self):
        h = disjoint_edges(5)
        assert max_degree(h) == 1
        # a pair inside a single edge has codegree 1, consistent with the
        # Fano (=1) and complete-3-uniform (=C(7,1)) counts below
        assert max_codegree(h) == 1

    def test_fano_plane(self):
        h = Hypergraph.from_lists(7, FANO)
        assert max_degree(h) == 3
        assert max_codegree(h) == 1

    def test_complete_3_uniform_on_9(self):
        h = complete_3_uniform(9)
        assert max_degree(h) == math.comb(8, 2) == 28
        assert max_codegree(h) == math.comb(7, 1) == 7


class TestFindMatching:
    def test_disjoint_edges_all_matched_ratio_one(self):
        n = 6
        h = disjoint_edges(n)
        w = TupleWeight("unit", 1, 1.0, {i: 1.0 for i in range(n)})
        rep = find_matching(h, [w], {"seed": 3})
        assert sorted(rep.matching) == list(range(n))
        row = rep.weight_rows[0]
        assert row["ratio"] == pytest.approx(1.0)

    def test_fano_single_line(self):
        h = Hypergraph.from_lists(7, FANO)
        rep = find_matching(h, [], {"seed": 1})
        assert len(rep.matching) == 1  # any two lines intersect

    def test_complete_3_uniform_on_9_perfect(self):
        h = complete_3_uniform(9)
        w = TupleWeight("unit", 1, 1.0, {i: 1.0 for i in range(h.e())})
        rep = find_matching(h, [w], {"seed": 5})
        assert len(rep.matching) == 3
        assert rep.weight_rows[0]["ratio"] == pytest.approx(3 * 28 / 84)

    def test_deterministic_per_seed(self):
        h = complete_3_uniform(10)
        r1 = find_matching(h, [], {"seed": 42})
        r2 = find_matching(h, [], {"seed": 42})
        assert r1.matching == r2.matching
        r3 = find_matching(h, [], {"seed": 43})
        assert r3.matching is not None

    @given(st.integers(0, 200))
    @settings(max_examples=40, deadline=None)
    def test_output_disjoint_and_maximal(self, seed):
        rng = derive_rng(seed, "hyp")
        n = rng.randint(6, 24)
        k = rng.choice([2, 3])
        m = rng.randint(3, 40)
        edges = []
        for _ in range(m):
            edges.append(rng.sample(range(n), k))
        h = Hypergraph.from_lists(n, edges)
        rep = find_matching(h, [], {"seed": seed})
        used = set()
        for eid in rep.matching:
            assert not (used & h.edges[eid])
            used |= h.edges[eid]
        for eid in range(h.e()):
            assert h.edges[eid] & used, "maximality violated"


class TestBruteForce:
    def test_disjoint_edges(self):
        h = disjoint_edges(4)
        assert brute_force_best_matching(h) == [0, 1, 2, 3]

    def test_fano_best_is_single(self):
        h = Hypergraph.from_lists(7, FANO)
        assert len(brute_force_best_matching(h)) == 1

    def test_path_like_alternation(self):
        # 4 edges sharing consecutive vertices; best picks the alternating pair
        edges = [[0, 1, 2], [2, 3, 4], [4, 5, 6], [6, 7, 8]]
        h = Hypergraph.from_lists(9, edges)
        best = brute_force_best_matching(h)
        assert len(best) == 2
        assert best in ([0, 1], [0, 2], [0, 3], [1, 3])
        a, b = best
        assert not (h.edges[a] & h.edges[b])

    def test_size_limit(self):
        h = complete_3_uniform(9)
        assert h.e() > 22
        with pytest.raises(Exception):
            brute_force_best_matching(h)

    def test_weighted_prefers_heavy_edge(self):
        edges = [[0, 1], [1, 2], [2, 3]]
        h = Hypergraph.from_lists(4, edges)
        w = TupleWeight("w", 1, 5.0, {0: 1.0, 1: 5.0, 2: 1.0})
        best = brute_force_best_matching(h, w)
        assert best == [1]


class TestTupleWeights:
    def test_clean_guard_zeroes_intersecting_pairs(self):
        edges = [[0, 1], [1, 2], [3, 4]]
        h = Hypergraph.from_lists(5, edges)
        w = TupleWeight("pair", 2, 1.0, ({0: 1.0}, {1: 1.0, 2: 1.0}))
        assert w.evaluate(h, [0, 1]) == 0.0  # share vertex 1
        assert w.evaluate(h, [0, 2]) == 1.0

    def test_total_mass_excludes_intersections(self):
        edges = [[0, 1], [1, 2], [3, 4]]
        h = Hypergraph.from_lists(5, edges)
        w = TupleWeight("pair", 2, 1.0, ({0: 1.0}, {1: 1.0, 2: 1.0}))
        assert w.total_mass(h) == pytest.approx(1.0)

    def test_spot_check_rejects_dirty_weight(self):
        edges = [[0, 1], [1, 2]]
        h = Hypergraph.from_lists(3, edges)

        class Dirty(TupleWeight):
            def evaluate(self, h, ids):  # no matching guard
                return 1.0

        w = Dirty("dirty", 2, 1.0, ({0: 1.0}, {1: 1.0}))
        with pytest.raises(Exception):
            w.spot_check_clean(h, seed=0)
