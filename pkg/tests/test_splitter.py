"""Refinement conditions verified exactly; closed loop with the checker."""

import pytest

from blowpack.graphs import Graph
from blowpack.rng import derive_rng
from blowpack.splitter import (
    ConfigurationError,
    RefinedPartition,
    SplitConfig,
    check_refinement,
    refine_collection,
)


def edgeless_guest(n, r):
    per = n // r
    clusters = [list(range(i * per, (i + 1) * per)) for i in range(r)]
    return Graph.empty(n), clusters


def matching_guest(n):
    """Perfect matching between two clusters of size n."""
    g = Graph.from_edges(2 * n, [(i, n + i) for i in range(n)])
    return g, [list(range(n)), list(range(n, 2 * n))]


def triangle_union_guest(k):
    """k disjoint triangles, clusters split one vertex per triangle corner."""
    edges = []
    for t in range(k):
        a, b, c = 3 * t, 3 * t + 1, 3 * t + 2
        edges += [(a, b), (b, c), (a, c)]
    g = Graph.from_edges(3 * k, edges)
    clusters = [[3 * t for t in range(k)], [3 * t + 1 for t in range(k)],
                [3 * t + 2 for t in range(k)]]
    return g, clusters


class TestRefineCollection:
    def test_edgeless_any_balanced_split_valid(self):
        g, clusters = edgeless_guest(40, 2)
        cfg = SplitConfig(beta_inv=2, seed=1)
        ref, report = refine_collection([(g, clusters)], cfg,
                                        [[[1.0] * 40]])
        assert report["passed"]
        for i in range(2):
            sizes = [len(s) for s in ref.parts[0][i]]
            assert sizes == [10, 10]

    def test_perfect_matching_no_subcluster_pair(self):
        g, clusters = matching_guest(100)
        cfg = SplitConfig(beta_inv=4, seed=7)
        ref, report = refine_collection([(g, clusters)], cfg)
        assert report["passed"]
        # H^2 of a perfect matching is the matching itself: no sub-cluster
        # may contain two matched endpoints -- matched pairs never share a
        # cluster here, but the checker must confirm H^2-independence anyway
        assert report["conditions"]["independence"]["passed"]

    def test_triangle_union_with_degree_weight(self):
        g, clusters = triangle_union_guest(100)
        cfg = SplitConfig(beta_inv=10, seed=3)
        n = 100
        wdeg = [[[float(g.degree(x)) for x in range(g.n)]]]
        ref, report = refine_collection([(g, clusters)], cfg, wdeg)
        assert report["passed"]
        beta = 0.1
        for i, cluster in enumerate(clusters):
            total = sum(g.degree(x) for x in cluster)
            for sub in ref.parts[0][i]:
                part = sum(g.degree(x) for x in sub)
                assert abs(part - beta * total) <= beta ** 1.5 * n + 1e-9

    def test_output_always_passes_checker(self):
        for seed in range(15):
            rng = derive_rng(seed, "split-loop")
            n = rng.choice([24, 36, 48])
            g, clusters = triangle_union_guest(n // 3 * 1)
            cfg = SplitConfig(beta_inv=rng.choice([3, 4, 6]), seed=seed)
            ref, report = refine_collection([(g, clusters)], cfg)
            assert report["passed"]
            again = check_refinement([(g, clusters)], ref, cfg)
            assert again["passed"]

    def test_identity_refinement_at_beta_one_rejected_config(self):
        with pytest.raises(ConfigurationError):
            SplitConfig(beta_inv=1, seed=0)

    def test_conflicted_refinement_fails_checker_with_witness(self):
        g, clusters = matching_guest(4)
        cfg = SplitConfig(beta_inv=2, seed=0)
        # deliberately put a matched pair's endpoints... matched endpoints
        # live in different clusters, so build an H^2 conflict instead: a
        # path x-y-z with x,z in cluster 0
        g2 = Graph.from_edges(4, [(0, 2), (2, 1)])
        clusters2 = [[0, 1], [2, 3]]
        bad = RefinedPartition([[[[0, 1], []], [[2], [3]]]])
        report = check_refinement([(g2, clusters2)], bad, cfg)
        assert not report["conditions"]["independence"]["passed"]
        w = report["conditions"]["independence"]["witness"]
        assert sorted([w["pair"][0], w["pair"][1]]) == [0, 1]

    def test_cluster_sizes_must_match_across_guests(self):
        g1, c1 = edgeless_guest(12, 2)
        g2, c2 = edgeless_guest(14, 2)
        with pytest.raises(ConfigurationError):
            refine_collection([(g1, c1), (g2, c2)], SplitConfig(2, 0))

    def test_collection_edge_balance_reported(self):
        guests = [matching_guest(48) for _ in range(4)]
        cfg = SplitConfig(beta_inv=4, seed=5)
        ref, report = refine_collection(guests, cfg)
        eb = report["conditions"]["edge_balance"]
        assert eb["passed"]

    def test_sizes_ascending_within_cluster(self):
        g, clusters = edgeless_guest(26, 2)  # 13 per cluster, beta_inv 4
        cfg = SplitConfig(beta_inv=4, seed=2)
        ref, report = refine_collection([(g, clusters)], cfg)
        assert report["passed"]
        for i in range(2):
            sizes = [len(s) for s in ref.parts[0][i]]
            assert sizes == sorted(sizes)
            assert sizes[-1] - sizes[0] <= 1
            assert sum(sizes) == 13
