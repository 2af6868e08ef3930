"""Embedding micro oracles: feasibility vs exhaustive search."""

import pytest

from blowpack.embedder import EmbeddingFailure, EmbeddingTask, embed_single
from blowpack.graphs import Graph
from blowpack.rng import derive_rng


def complete_adjacency(sizes):
    adj = {}
    for i, si in enumerate(sizes):
        for j, sj in enumerate(sizes):
            if i != j:
                adj[(i, j)] = [(1 << sj) - 1] * si
    return adj


def full_candidates(sizes):
    return {(i, k): (1 << s) - 1 for i, s in enumerate(sizes)
            for k in range(s)}


def make_task(graph, clusters, slots, candidates=None, adjacency=None):
    sizes = [len(c) for c in clusters]
    return EmbeddingTask(graph, clusters, slots,
                         candidates or full_candidates(sizes),
                         adjacency or complete_adjacency(sizes))


class TestEmbedSingle:
    def test_edgeless_guest_complete_candidates(self):
        g = Graph.empty(6)
        task = make_task(g, [[0, 1, 2], [3, 4, 5]], [[10, 11, 12], [13, 14, 15]])
        phi = embed_single(task, {"seed": 1})
        assert sorted(phi[x] for x in (0, 1, 2)) == [10, 11, 12]
        assert sorted(phi[x] for x in (3, 4, 5)) == [13, 14, 15]

    def test_perfect_matching_into_complete_bipartite(self):
        g = Graph.from_edges(6, [(0, 3), (1, 4), (2, 5)])
        task = make_task(g, [[0, 1, 2], [3, 4, 5]], [[0, 1, 2], [3, 4, 5]])
        phi = embed_single(task, {"seed": 2})
        assert len(phi) == 6

    def test_cycle_into_cycle_blowup_aligns(self):
        """C8 split round-robin over 4 clusters of size 2, host also a C8 on
        the same cluster pattern: an embedding exists only when the cycles
        align, confirmed by enumerating all 2!^4 cluster bijections."""
        from itertools import product

        cyc = [(i, (i + 1) % 8) for i in range(8)]
        g = Graph.from_edges(8, cyc)
        clusters = [[i, i + 4] for i in range(4)]
        slots = [[i, i + 4] for i in range(4)]
        host = Graph.from_edges(8, cyc)
        adj = {}
        for i in range(4):
            for j in range(4):
                if i == j:
                    continue
                rows = []
                for a in slots[i]:
                    m = 0
                    for bi, b in enumerate(slots[j]):
                        if host.has_edge(a, b):
                            m |= 1 << bi
                    rows.append(m)
                adj[(i, j)] = rows
        task = EmbeddingTask(g, clusters, slots, full_candidates([2] * 4), adj)
        phi = embed_single(task, {"seed": 3})

        # oracle: enumerate every per-cluster bijection
        feasible = []
        for flips in product([0, 1], repeat=4):
            cand = {}
            for i, f in enumerate(flips):
                cand[clusters[i][0]] = slots[i][f]
                cand[clusters[i][1]] = slots[i][1 - f]
            ok = all(host.has_edge(cand[u], cand[v]) for u, v in cyc)
            if ok:
                feasible.append(cand)
        assert feasible, "oracle says the aligned assignment exists"
        assert phi in feasible

    def test_infeasible_task_raises(self):
        g = Graph.from_edges(4, [(0, 2), (0, 3), (1, 2), (1, 3)])
        clusters = [[0, 1], [2, 3]]
        slots = [[0, 1], [2, 3]]
        # host pair carries NO edges: any guest edge is unembeddable
        adj = {(0, 1): [0, 0], (1, 0): [0, 0]}
        task = EmbeddingTask(g, clusters, slots, full_candidates([2, 2]), adj)
        with pytest.raises(EmbeddingFailure):
            embed_single(task, {"seed": 1, "restarts": 3})

    def test_sanity_family_never_fails(self):
        """Complete candidates + complete multipartite host: bounded-degree
        guests always embed, every seed."""
        for seed in range(20):
            rng = derive_rng(seed, "sanity")
            k = rng.randint(2, 4)
            size = rng.randint(2, 5)
            n = k * size
            clusters = [list(range(i * size, (i + 1) * size)) for i in range(k)]
            edges = []
            for i in range(k - 1):
                perm = list(range(size))
                rng.shuffle(perm)
                for a in range(size):
                    edges.append((clusters[i][a], clusters[i + 1][perm[a]]))
            g = Graph.from_edges(n, edges)
            slots = [[100 + i * size + a for a in range(size)] for i in range(k)]
            task = make_task(g, clusters, slots)
            phi = embed_single(task, {"seed": seed})
            assert len(phi) == n

    def test_agrees_with_exhaustive_on_feasibility(self):
        """Random tasks with max cluster size <= 4: greedy+restarts succeeds
        iff the exhaustive fallback finds an embedding."""
        from blowpack.embedder import _exhaustive_embed

        agreements = 0
        for seed in range(100):
            rng = derive_rng(seed, "oracle")
            size = rng.randint(2, 4)
            clusters = [list(range(size)), list(range(size, 2 * size))]
            slots = [list(range(size)), list(range(size, 2 * size))]
            edges = []
            for a in range(size):
                for b in range(size):
                    if rng.random() < 0.4:
                        edges.append((clusters[0][a], clusters[1][b]))
            g = Graph.from_edges(2 * size, edges)
            adj_ab = [rng.getrandbits(size) for _ in range(size)]
            adj_ba = [0] * size
            for a in range(size):
                for b in range(size):
                    if (adj_ab[a] >> b) & 1:
                        adj_ba[b] |= 1 << a
            cands = {(i, k): rng.getrandbits(size) | 1
                     for i in range(2) for k in range(size)}
            task = EmbeddingTask(g, clusters, slots, cands,
                                 {(0, 1): adj_ab, (1, 0): adj_ba})
            owner = task.cluster_of()
            feasible = _exhaustive_embed(task, owner) is not None
            try:
                embed_single(task, {"seed": seed, "restarts": 6,
                                    "exhaustive_limit": 0})
                got = True
            except EmbeddingFailure:
                got = False
            if got == feasible:
                agreements += 1
            else:
                # greedy may miss a feasible task; it must never fabricate
                assert feasible and not got
        assert agreements >= 95
