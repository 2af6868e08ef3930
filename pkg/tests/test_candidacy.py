"""Packing-instance machinery at micro scale with exhaustive oracles."""

from itertools import combinations

import pytest

from blowpack.candidacy import (
    CandidacyError,
    CandidacyGraph,
    ConflictFreePacking,
    EdgeSetLabelling,
    PackingInstance,
    StepGuest,
    approximate_pack_step,
    build_aux_hypergraph,
    enlarge,
    is_conflict_free,
    psi_codegree,
    psi_degree,
    sigma_from_matching,
    update_candidacy,
)
from blowpack.graphs import Graph
from blowpack.rng import derive_rng


def make_instance(guests, host, clusters, ra, rb, candidacy, anchors=None,
                  overlay=None, densities=None):
    psi = EdgeSetLabelling(host, anchors or {}, overlay or {})
    dens = densities or {"d_A": 0.5, "d_B": 0.5,
                         "roles": {r: 1.0 for r in clusters}}
    return PackingInstance(tuple(guests), host, clusters,
                           frozenset(ra), frozenset(rb), candidacy, psi, dens)


def single_guest_instance(n0=4, overlay=None, host=None):
    """One guest: X_0 of size n0, complete candidacy to V_0, no other roles."""
    guest = StepGuest(Graph.empty(n0), {0: tuple(range(n0))})
    host = host or Graph.empty(n0)
    cand = {(0, 0): CandidacyGraph.complete(range(n0), range(n0))}
    return make_instance([guest], host, {0: tuple(range(n0))}, [], [],
                         cand, overlay=overlay)


class TestEnlarge:
    def test_empty_x0_adds_nothing(self):
        g = StepGuest(Graph.empty(6), {0: (), 1: (0, 1, 2), 2: (3, 4, 5)})
        partners = enlarge([g])
        assert partners == [{}]

    def test_maximal_matching_added(self):
        g = StepGuest(Graph.empty(6), {0: (0, 1, 2), 1: (3, 4, 5)})
        partners = enlarge([g])[0]
        assert sorted(partners) == [3, 4, 5]
        assert sorted(x0 for x0, real in partners.values()) == [0, 1, 2]
        assert all(not real for _x0, real in partners.values())

    def test_existing_matching_completed_with_unmatched_only(self):
        gr = Graph.from_edges(6, [(0, 3)])  # x=3 already matched to x0=0
        g = StepGuest(gr, {0: (0, 1, 2), 1: (3, 4, 5)})
        partners = enlarge([g])[0]
        assert partners[3] == (0, True)
        added = {x: p for x, p in partners.items() if x != 3}
        assert sorted(added) == [4, 5]
        used = {p[0] for p in added.values()}
        assert used <= {1, 2} and len(used) == 2

    def test_two_x0_neighbours_rejected(self):
        gr = Graph.from_edges(4, [(0, 3), (1, 3)])
        g = StepGuest(gr, {0: (0, 1, 2), 1: (3,)})
        with pytest.raises(CandidacyError):
            enlarge([g])


class TestUpdateCandidacy:
    def brute_force_update(self, cand, sigma, host, guest):
        """Independent recomputation straight from the definition."""
        x0set = set(guest.clusters.get(0, ()))
        rows = []
        for xi, x in enumerate(cand.x_ids):
            nbrs0 = [y for y in guest.graph.neighbors(x) if y in x0set]
            row = 0
            for vj, v in enumerate(cand.v_ids):
                if not (cand.rows[xi] >> vj) & 1:
                    continue
                keep = True
                if nbrs0 and nbrs0[0] in sigma:
                    keep = host.has_edge(sigma[nbrs0[0]], v)
                if keep:
                    row |= 1 << vj
            rows.append(row)
        return rows

    def test_empty_sigma_is_identity(self):
        gr = Graph.from_edges(4, [(0, 2)])
        g = StepGuest(gr, {0: (0, 1), 1: (2, 3)})
        cand = CandidacyGraph.complete([2, 3], [10, 11])
        host = Graph.empty(12)
        out = update_candidacy(cand, {}, host, g)
        assert out.rows == cand.rows

    def test_isolated_image_isolates_vertex(self):
        gr = Graph.from_edges(4, [(0, 2)])
        g = StepGuest(gr, {0: (0, 1), 1: (2, 3)})
        cand = CandidacyGraph.complete([2, 3], [4, 5])
        host = Graph.from_edges(6, [(1, 4)])  # vertex 0 isolated
        out = update_candidacy(cand, {0: 0}, host, g)
        assert out.rows[0] == 0          # x=2 constrained by sigma(0)=0
        assert out.rows[1] == cand.rows[1]

    def test_matches_brute_force_on_random_micro_instances(self):
        for seed in range(100):
            rng = derive_rng(seed, "upd")
            n0, n1, nv = rng.randint(1, 3), rng.randint(2, 4), rng.randint(2, 4)
            gverts = n0 + n1
            edges = []
            for x in range(n0, gverts):
                if rng.random() < 0.7:
                    edges.append((rng.randrange(n0), x))
            g = StepGuest(Graph.from_edges(gverts, edges),
                          {0: tuple(range(n0)), 1: tuple(range(n0, gverts))})
            hostn = nv + n0
            hedges = [(u, v) for u in range(hostn) for v in range(u + 1, hostn)
                      if rng.random() < 0.5]
            host = Graph.from_edges(hostn, hedges)
            rows = [rng.getrandbits(nv) for _ in range(n1)]
            cand = CandidacyGraph(tuple(range(n0, gverts)),
                                  tuple(range(nv)), rows)
            sigma = {x: nv + x for x in range(n0) if rng.random() < 0.7}
            out = update_candidacy(cand, sigma, host, g)
            assert out.rows == self.brute_force_update(cand, sigma, host, g)


class TestAuxBijection:
    def random_micro_instance(self, seed):
        """<= 12 candidacy edges across <= 3 tiny guests with label overlays."""
        rng = derive_rng(seed, "aux")
        nguests = rng.randint(1, 3)
        n0 = rng.randint(2, 3)
        guests = []
        cand = {}
        overlay = {}
        labels = [("L", i) for i in range(rng.randint(2, 5))]
        budget = 12
        host = Graph.empty(n0)
        label_home: dict = {}
        for g in range(nguests):
            guests.append(StepGuest(Graph.empty(n0), {0: tuple(range(n0))}))
            rows = []
            for x in range(n0):
                row = 0
                for v in range(n0):
                    if budget > 0 and rng.random() < 0.6:
                        row |= 1 << v
                        budget -= 1
                        chosen = []
                        for lab in labels:
                            if rng.random() < 0.3 and label_home.get(lab, v) == v:
                                chosen.append(lab)
                                label_home[lab] = v
                        if chosen:
                            overlay[(g, 0, x, v)] = tuple(chosen)
                rows.append(row)
            cand[(g, 0)] = CandidacyGraph(tuple(range(n0)),
                                          tuple(range(n0)), rows)
        inst = make_instance(guests, host, {0: tuple(range(n0))}, [], [],
                             cand, overlay=overlay)
        return inst

    def test_bijection_on_50_micro_instances(self):
        """Every aux matching translates to a conflict-free packing and
        conversely; exhaustive over all edge subsets."""
        for seed in range(50):
            inst = self.random_micro_instance(seed)
            aux = build_aux_hypergraph(inst)
            m = len(aux.edge_origin)
            if m == 0:
                continue
            assert m <= 12
            for bits in range(1 << m):
                subset = [i for i in range(m) if (bits >> i) & 1]
                used = set()
                is_matching = True
                for eid in subset:
                    e = aux.hypergraph.edges[eid]
                    if used & e:
                        is_matching = False
                        break
                    used |= e
                sigma = sigma_from_matching(aux, subset, len(inst.guests))
                # a subset that repeats an x inside one guest is not even a
                # function; only compare when sigma is well-defined
                well_defined = len(subset) == sum(
                    len(mp) for mp in sigma.maps)
                if not well_defined:
                    assert not is_matching
                    continue
                assert is_matching == is_conflict_free(inst, sigma), (
                    seed, subset)

    def test_shared_label_blocks_pair(self):
        # the star invariant pins a shared label to one host vertex, so the
        # conflicting edges both sit at v=1
        overlay = {(0, 0, 0, 1): (("L", 0),), (0, 0, 1, 1): (("L", 0),)}
        inst = single_guest_instance(2, overlay=overlay)
        aux = build_aux_hypergraph(inst)
        eid_a = aux.edge_origin.index((0, 0, 1))
        eid_b = aux.edge_origin.index((0, 1, 1))
        assert aux.hypergraph.edges[eid_a] & aux.hypergraph.edges[eid_b]

    def test_disjoint_singleton_labels_all_subsets_match(self):
        overlay = {(0, 0, x, x): (("L", x),) for x in range(3)}
        guest = StepGuest(Graph.empty(3), {0: (0, 1, 2)})
        cand = {(0, 0): CandidacyGraph(
            (0, 1, 2), (0, 1, 2), [1 << x for x in range(3)])}
        inst = make_instance([guest], Graph.empty(3), {0: (0, 1, 2)}, [], [],
                             cand, overlay=overlay)
        aux = build_aux_hypergraph(inst)
        assert len(aux.edge_origin) == 3
        for a, b in combinations(range(3), 2):
            assert not (aux.hypergraph.edges[a] & aux.hypergraph.edges[b])


class TestPsiStats:
    def test_empty_labelling(self):
        inst = single_guest_instance(3)
        assert psi_degree(inst, 0) == 0
        assert psi_codegree(inst, 0) == 0

    def test_one_label_on_k_edges(self):
        overlay = {(0, 0, x, 1): (("L", 0),) for x in range(3)}
        guest = StepGuest(Graph.empty(3), {0: (0, 1, 2)})
        cand = {(0, 0): CandidacyGraph((0, 1, 2), (0, 1, 2), [2, 2, 2])}
        inst = make_instance([guest], Graph.empty(3), {0: (0, 1, 2)}, [], [],
                             cand, overlay=overlay)
        assert psi_degree(inst, 0) == 3

    def test_codegree_counts_pairs(self):
        overlay = {(0, 0, 0, 1): (("L", 0), ("L", 1)),
                   (0, 0, 1, 1): (("L", 0), ("L", 1))}
        guest = StepGuest(Graph.empty(2), {0: (0, 1)})
        cand = {(0, 0): CandidacyGraph((0, 1), (0, 1), [2, 2])}
        inst = make_instance([guest], Graph.empty(2), {0: (0, 1)}, [], [],
                             cand, overlay=overlay)
        assert psi_codegree(inst, 0) == 2


class TestStepMicro:
    def test_complete_candidacy_perfect_assignment(self):
        """X_0 of size 4, complete A_0, empty labels: sigma is a perfect
        conflict-free assignment (the brute-force oracle agrees one exists)."""
        inst = single_guest_instance(4)
        out = approximate_pack_step(inst, params={
            "seed": 3, "niceify": False, "coverage_min": 1.0})
        assert out.sigma.domain_size(0) == 4
        vals = set(out.sigma.maps[0].values())
        assert vals == {0, 1, 2, 3}

    def test_two_guests_disjoint_labels_cover(self):
        overlay = {}
        for g in range(2):
            for x in range(3):
                for v in range(3):
                    overlay[(g, 0, x, v)] = ((f"L{g}", x, v),)
        guests = [StepGuest(Graph.empty(3), {0: (0, 1, 2)}) for _ in range(2)]
        cand = {(g, 0): CandidacyGraph.complete(range(3), range(3))
                for g in range(2)}
        inst = make_instance(guests, Graph.empty(3), {0: (0, 1, 2)}, [], [],
                             cand, overlay=overlay)
        out = approximate_pack_step(inst, params={
            "seed": 1, "niceify": False, "coverage_min": 1.0})
        for g in range(2):
            assert out.sigma.domain_size(g) == 3
