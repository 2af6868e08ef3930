"""Density / regularity / typicality verdicts against small exact oracles."""

import itertools
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blowpack.graphs import BipartitePair, Graph, random_bipartite, random_graph
from blowpack.regularity import (
    DomainError,
    SizeError,
    density,
    exception_count,
    quasirandomness_verdict,
    regularity_verdict,
    residual_pair,
    super_regularity_verdict,
    typicality_verdict,
)


def full_mask(n):
    return (1 << n) - 1


def brute_force_regular(pair, eps, d):
    """Direct enumeration over all subset pairs with |W_i| >= eps |V_i|."""
    import math

    k1 = max(1, math.ceil(eps * pair.nl - 1e-12))
    k2 = max(1, math.ceil(eps * pair.nr - 1e-12))
    for m1 in range(1, 1 << pair.nl):
        if m1.bit_count() < k1:
            continue
        for m2 in range(1, 1 << pair.nr):
            if m2.bit_count() < k2:
                continue
            dens = pair.edges_between(m1, m2) / (m1.bit_count() * m2.bit_count())
            if abs(dens - d) > eps + 1e-12:
                return False
    return True


class TestDensity:
    def test_complete_bipartite(self):
        p = BipartitePair.complete(3, 3)
        assert density(p, full_mask(3), full_mask(3)) == 1

    def test_perfect_matching(self):
        n = 5
        p = BipartitePair.from_edges(n, n, [(i, i) for i in range(n)])
        assert density(p, full_mask(n), full_mask(n)) == Fraction(1, n)

    def test_c6_natural_bipartition(self):
        # C6 as bipartite 3+3: i on the left adjacent to i and i+1 mod 3
        p = BipartitePair.from_edges(3, 3, [(i, i) for i in range(3)]
                                     + [(i, (i + 1) % 3) for i in range(3)])
        assert density(p, full_mask(3), full_mask(3)) == Fraction(2, 3)

    def test_empty_subset_rejected(self):
        p = BipartitePair.complete(3, 3)
        with pytest.raises(DomainError):
            density(p, 0, full_mask(3))

    @given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 10 ** 6))
    @settings(max_examples=50, deadline=None)
    def test_symmetric_under_transpose(self, nl, nr, seed):
        p = random_bipartite(nl, nr, 0.5, seed)
        w1, w2 = full_mask(nl), full_mask(nr)
        assert density(p, w1, w2) == density(p.transpose(), w2, w1)


class TestRegularityVerdict:
    def test_complete_accepts_everywhere(self):
        p = BipartitePair.complete(4, 4)
        v = regularity_verdict(p, eps=0.3, d=1.0, mode="exhaustive")
        assert v.accepted and v.mode == "exhaustive"

    def test_two_blocks_rejected_with_witness(self):
        # left half adjacent to right half only, in two disjoint blocks
        edges = [(u, v) for u in range(3) for v in range(3)]
        edges += [(u, v) for u in range(3, 6) for v in range(3, 6)]
        p = BipartitePair.from_edges(6, 6, edges)
        v = regularity_verdict(p, eps=0.4, d=0.5, mode="exhaustive")
        assert not v.accepted
        assert v.witness is not None
        w1 = v.witness["W1"]
        w2 = v.witness["W2"]
        assert v.witness["density"] in (0.0, 1.0)
        assert len(w1) >= 3 and len(w2) >= 3

    def test_exhaustive_size_limit(self):
        p = BipartitePair.complete(10, 10)
        with pytest.raises(SizeError):
            regularity_verdict(p, 0.2, 1.0, mode="exhaustive")

    def test_codegree_accepts_seeded_random_pair(self):
        p = random_bipartite(64, 64, 0.5, seed=7)
        v = regularity_verdict(p, eps=0.2, d=0.5, mode="codegree")
        assert v.accepted
        assert v.mode == "codegree-certificate"

    def test_codegree_refuses_unbalanced(self):
        p = BipartitePair.complete(64, 8)
        with pytest.raises(SizeError):
            regularity_verdict(p, 0.2, 1.0, mode="codegree")

    def test_witness_search_finds_block_violation(self):
        edges = [(u, v) for u in range(8) for v in range(8)]
        edges += [(u, v) for u in range(8, 16) for v in range(8, 16)]
        p = BipartitePair.from_edges(16, 16, edges)
        v = regularity_verdict(p, eps=0.3, d=0.5, mode="witness-search", seed=3)
        assert not v.accepted
        assert v.witness is not None

    @given(st.integers(0, 500))
    @settings(max_examples=60, deadline=None)
    def test_exhaustive_matches_brute_force(self, seed):
        import random

        rng = random.Random(seed)
        nl = rng.randint(2, 6)
        nr = rng.randint(2, 6)
        p = random_bipartite(nl, nr, rng.choice([0.3, 0.5, 0.8]), seed)
        eps = rng.choice([0.3, 0.45, 0.6])
        d = rng.choice([0.2, 0.5, 0.8])
        v = regularity_verdict(p, eps, d, mode="exhaustive")
        assert v.accepted == brute_force_regular(p, eps, d)


class TestSuperRegularity:
    def test_complete_accepted(self):
        p = BipartitePair.complete(5, 5)
        v = super_regularity_verdict(p, 0.3, 1.0, mode="exhaustive")
        assert v.accepted

    def test_isolated_vertex_is_witness(self):
        edges = [(u, v) for u in range(1, 5) for v in range(5)]
        p = BipartitePair.from_edges(5, 5, edges)
        v = super_regularity_verdict(p, 0.5, 1.0, mode="exhaustive")
        assert not v.accepted
        assert v.witness["vertex"] == 0 and v.witness["side"] == "left"

    def test_seeded_random_pair_accepted(self):
        p = random_bipartite(64, 64, 0.5, seed=1)
        v = super_regularity_verdict(p, 0.2, 0.5, mode="codegree")
        assert v.accepted


class TestTypicality:
    def test_complete_graph(self):
        n = 40
        g = Graph.from_edges(n, [(u, v) for u in range(n)
                                 for v in range(u + 1, n)])
        v = typicality_verdict(g, eps=0.1, s=2, d=1 - 2 / n)
        assert v.accepted

    def test_empty_graph_rejected_at_singletons(self):
        g = Graph.empty(10)
        v = typicality_verdict(g, eps=0.1, s=2, d=0.5)
        assert not v.accepted
        assert len(v.witness["U"]) == 1

    @pytest.mark.slow
    def test_seeded_gnp_256_s3(self):
        # the relative window is narrower than binomial noise at this scale,
        # so the G(n,p) acceptance check runs with the absolute window
        g = random_graph(256, 0.5, seed=0)
        v = typicality_verdict(g, eps=0.15, s=3, d=0.5, window="absolute")
        assert v.accepted

    def test_relative_window_rejects_gnp_at_this_scale(self):
        g = random_graph(256, 0.5, seed=0)
        v = typicality_verdict(g, eps=0.15, s=2, d=0.5, window="relative")
        assert not v.accepted

    def test_quasirandomness_is_s2_window(self):
        g = random_graph(128, 0.5, seed=0)
        v = quasirandomness_verdict(g, eps=0.2, d=0.5)
        assert v.accepted

    def test_typicality_s1_implies_degree_window(self):
        g = random_graph(64, 0.5, seed=3)
        v = typicality_verdict(g, eps=0.2, s=1, d=0.5)
        if v.accepted:
            for u in range(g.n):
                assert abs(g.degree(u) - 0.5 * g.n) <= 0.2 * 0.5 * g.n + 1e-9


class TestExceptionCount:
    def test_complete_no_exceptions(self):
        p = BipartitePair.complete(6, 6)
        assert exception_count(p, full_mask(6), eps=0.3, d=1.0) == 0

    def test_one_isolated_left_vertex(self):
        edges = [(u, v) for u in range(1, 6) for v in range(6)]
        p = BipartitePair.from_edges(6, 6, edges)
        assert exception_count(p, full_mask(6), eps=0.3, d=1.0) == 1

    def test_small_y_rejected(self):
        p = BipartitePair.complete(6, 6)
        with pytest.raises(DomainError):
            exception_count(p, 1, eps=0.5, d=1.0)

    def test_seeded_random_pair_bound(self):
        import random

        p = random_bipartite(64, 64, 0.5, seed=13)
        rng = random.Random(1)
        y = 0
        for v in rng.sample(range(64), 32):
            y |= 1 << v
        assert exception_count(p, y, eps=0.2, d=0.5) <= 2 * 0.2 * 64

    def test_fact32_bound_on_exhaustively_accepted_pairs(self):
        """On pairs accepted exhaustively at (eps,d), the exception count is
        at most 2 eps |A| for every Y with |Y| >= eps |B| (enumerated)."""
        import random

        checked = 0
        for seed in range(40):
            rng = random.Random(seed)
            nl, nr = rng.randint(3, 6), rng.randint(3, 6)
            p = random_bipartite(nl, nr, rng.choice([0.4, 0.6, 0.9]), seed)
            eps = rng.choice([0.35, 0.5])
            dens = p.edge_count() / (nl * nr)
            v = regularity_verdict(p, eps, dens, mode="exhaustive")
            if not v.accepted:
                continue
            checked += 1
            for ym in range(1, 1 << nr):
                if ym.bit_count() < eps * nr:
                    continue
                assert exception_count(p, ym, eps, dens) <= 2 * eps * nl + 1e-9
        assert checked >= 3


class TestResidualPair:
    def test_remove_nothing_is_identity(self):
        p = random_bipartite(8, 8, 0.5, seed=1)
        q, kl, kr = residual_pair(p, None)
        assert q.rows == p.rows and kl == list(range(8)) and kr == list(range(8))

    def test_never_adds_edges(self):
        p = random_bipartite(10, 10, 0.5, seed=2)
        rem = random_bipartite(10, 10, 0.2, seed=3)
        q, kl, kr = residual_pair(p, rem, removed_left=0b11, removed_right=0b1)
        for ui, u in enumerate(kl):
            for vi, v in enumerate(kr):
                if (q.rows[ui] >> vi) & 1:
                    assert (p.rows[u] >> v) & 1
                    assert not (rem.rows[u] >> v) & 1

    def test_one_vertex_removal_keeps_super_regularity(self):
        p = random_bipartite(64, 64, 0.5, seed=1)
        eps = 0.2
        assert super_regularity_verdict(p, eps, 0.5, mode="codegree").accepted
        q, _, _ = residual_pair(p, None, removed_left=1)
        v = super_regularity_verdict(q, eps ** (1 / 3), 0.5, mode="codegree")
        assert v.accepted

    def test_sparse_matching_removal_keeps_super_regularity(self):
        p = random_bipartite(64, 64, 0.5, seed=1)
        eps = 0.2
        matching = BipartitePair.from_edges(
            64, 64, [(i, i) for i in range(64) if (p.rows[i] >> i) & 1])
        assert matching.edge_count() > 0
        q, _, _ = residual_pair(p, matching)
        v = super_regularity_verdict(q, eps ** (1 / 3), 0.5, mode="codegree")
        assert v.accepted
