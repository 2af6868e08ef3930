"""Packing instances and the per-cluster approximate packing step.

A step instance bundles guests with role-indexed clusters (role 0 is the
cluster being embedded), a host graph, reduced edges split into an A part
(packing slice) and a B part (completion slice), candidacy graphs, and an
edge-set labelling.

The labelling is anchor-backed: the labels of a candidacy edge x-v are the
host edges between v and the images of x's already-embedded guest
neighbours (the anchors of x).  Tests may add explicit label overlays.
Because refined clusters are independent in H^2, no label can appear on two
candidacy edges of the same guest, which is the star/degree-1 shape the
conflict encoding needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .graphs import BipartitePair, Graph
from .hypermatch import Hypergraph, TupleWeight, find_matching
from .rng import derive_rng, list_to_mask, mask_to_list


class CandidacyError(ValueError):
    pass


class LabellingError(ValueError):
    pass


class StepFailure(RuntimeError):
    def __init__(self, msg: str, report: Optional["StepReport"] = None):
        super().__init__(msg)
        self.report = report


class InstanceDegradationError(RuntimeError):
    pass


@dataclass
class CandidacyGraph:
    """Bipartite candidacy graph between guest vertices and host vertices."""

    x_ids: tuple[int, ...]
    v_ids: tuple[int, ...]
    rows: list[int]

    def __post_init__(self) -> None:
        if len(self.rows) != len(self.x_ids):
            raise CandidacyError("row count must match x side")

    @classmethod
    def complete(cls, x_ids: Sequence[int], v_ids: Sequence[int]) -> "CandidacyGraph":
        full = (1 << len(v_ids)) - 1
        return cls(tuple(x_ids), tuple(v_ids), [full] * len(x_ids))

    def copy(self) -> "CandidacyGraph":
        return CandidacyGraph(self.x_ids, self.v_ids, list(self.rows))

    def x_pos(self) -> dict[int, int]:
        return {x: i for i, x in enumerate(self.x_ids)}

    def v_pos(self) -> dict[int, int]:
        return {v: i for i, v in enumerate(self.v_ids)}

    def edge_count(self) -> int:
        return sum(r.bit_count() for r in self.rows)

    def density(self) -> float:
        denom = len(self.x_ids) * len(self.v_ids)
        return self.edge_count() / denom if denom else 0.0

    def to_pair(self) -> BipartitePair:
        return BipartitePair(len(self.x_ids), len(self.v_ids), tuple(self.rows))

    def edges(self):
        for xi, row in enumerate(self.rows):
            m = row
            while m:
                vi = (m & -m).bit_length() - 1
                yield xi, vi
                m &= m - 1


@dataclass
class StepGuest:
    """One guest, restricted to the clusters that take part in a step."""

    graph: Graph
    clusters: dict[int, tuple[int, ...]]  # role -> guest vertex ids

    def role_of(self) -> dict[int, int]:
        out = {}
        for role, cl in self.clusters.items():
            for x in cl:
                out[x] = role
        return out


@dataclass
class EdgeSetLabelling:
    """Anchor-backed edge set labelling with an optional explicit overlay.

    anchors[(g, role, x)] is the tuple of host vertices carrying x's
    embedded-neighbour images; the labels of edge x-v are the host edges
    (u, v) for anchors u adjacent to v, plus any overlay labels.
    """

    host: Graph
    anchors: dict[tuple[int, int, int], tuple[int, ...]] = field(default_factory=dict)
    overlay: dict[tuple[int, int, int, int], tuple] = field(default_factory=dict)

    def labels(self, g: int, role: int, x: int, v: int) -> tuple:
        out = []
        for u in self.anchors.get((g, role, x), ()):
            if self.host.has_edge(u, v):
                out.append((min(u, v), max(u, v)))
        out.extend(self.overlay.get((g, role, x, v), ()))
        return tuple(out)

    def norm(self, inst: "PackingInstance", role: int) -> int:
        best = 0
        for g, cg in inst.candidacy_for_role(role):
            for xi, vi in cg.edges():
                best = max(best, len(self.labels(g, role, cg.x_ids[xi],
                                                 cg.v_ids[vi])))
        return best

    def with_sigma(self, inst: "PackingInstance", sigma: "ConflictFreePacking"
                   ) -> "EdgeSetLabelling":
        """Updated labelling: embedded role-0 neighbours become anchors."""
        new_anchors = dict(self.anchors)
        for g, guest in enumerate(inst.guests):
            smap = sigma.maps[g]
            role_of = guest.role_of()
            for x, v in smap.items():
                for y in guest.graph.neighbors(x):
                    role = role_of.get(y)
                    if role in (None, 0):
                        continue
                    key = (g, role, y)
                    cur = new_anchors.get(key, ())
                    if v not in cur:
                        new_anchors[key] = cur + (v,)
        return EdgeSetLabelling(self.host, new_anchors, dict(self.overlay))


def psi_degree(inst: "PackingInstance", role: int,
               labelling: Optional[EdgeSetLabelling] = None) -> int:
    """Max number of candidacy edges of the role's union graph carrying any
    one label."""
    psi = labelling or inst.psi
    counts: dict = {}
    for g, cg in inst.candidacy_for_role(role):
        for xi, vi in cg.edges():
            for lab in psi.labels(g, role, cg.x_ids[xi], cg.v_ids[vi]):
                counts[lab] = counts.get(lab, 0) + 1
    return max(counts.values(), default=0)


def psi_codegree(inst: "PackingInstance", role: int,
                 labelling: Optional[EdgeSetLabelling] = None) -> int:
    """Max number of candidacy edges carrying any fixed pair of labels."""
    psi = labelling or inst.psi
    counts: dict = {}
    for g, cg in inst.candidacy_for_role(role):
        for xi, vi in cg.edges():
            labs = sorted(psi.labels(g, role, cg.x_ids[xi], cg.v_ids[vi]))
            for a in range(len(labs)):
                for b in range(a + 1, len(labs)):
                    key = (labs[a], labs[b])
                    counts[key] = counts.get(key, 0) + 1
    return max(counts.values(), default=0)


@dataclass
class PackingInstance:
    """The (guests, host, R_A + R_B, candidacy union, labelling) bundle."""

    guests: tuple[StepGuest, ...]
    host: Graph
    clusters: dict[int, tuple[int, ...]]  # role -> host vertex ids
    ra_edges: frozenset[tuple[int, int]]
    rb_edges: frozenset[tuple[int, int]]
    candidacy: dict[tuple[int, int], CandidacyGraph]  # (guest, role) -> graph
    psi: EdgeSetLabelling
    densities: dict  # {"d_A":, "d_B":, "roles": {role: d_i}}

    @property
    def r(self) -> int:
        return len(self.clusters) - 1

    def roles(self) -> list[int]:
        return sorted(self.clusters.keys())

    def neighbour_roles(self, part: str) -> list[int]:
        edges = self.ra_edges if part == "A" else self.rb_edges
        out = set()
        for i, j in edges:
            if i == 0:
                out.add(j)
            elif j == 0:
                out.add(i)
        return sorted(out)

    def candidacy_for_role(self, role: int):
        for g in range(len(self.guests)):
            cg = self.candidacy.get((g, role))
            if cg is not None:
                yield g, cg

    def host_pair(self, i: int, j: int) -> BipartitePair:
        vi = self.clusters[i]
        vj = self.clusters[j]
        pos = {v: k for k, v in enumerate(vj)}
        rows = []
        for v in vi:
            m = 0
            for w in self.host.neighbors(v):
                k = pos.get(w)
                if k is not None:
                    m |= 1 << k
            rows.append(m)
        return BipartitePair(len(vi), len(vj), tuple(rows))

    def verify_properties(self, eps: float, mode: str = "codegree",
                          triple_samples: int = 30, seed: int = 0) -> dict:
        """(P1)-(P4) verification report."""
        from .regularity import SizeError, super_regularity_verdict

        report: dict = {}
        # P1: host pairs super-regular per part
        p1 = {"passed": True, "pairs": {}}
        for part, edges in (("A", self.ra_edges), ("B", self.rb_edges)):
            dz = self.densities[f"d_{part}"]
            for i, j in sorted(edges):
                try:
                    v = super_regularity_verdict(self.host_pair(i, j), eps,
                                                 dz, mode=mode, seed=seed)
                    ok = v.accepted
                except SizeError:
                    ok = None
                p1["pairs"][f"{part}:{i}-{j}"] = ok
                if ok is False:
                    p1["passed"] = False
        report["P1"] = p1

        # P2: candidacy graphs super-regular at their role densities
        p2 = {"passed": True, "rows": []}
        for (g, role), cg in sorted(self.candidacy.items()):
            d_i = self.densities["roles"].get(role)
            if d_i is None:
                continue
            try:
                v = super_regularity_verdict(cg.to_pair(), eps, d_i,
                                             mode=mode, seed=seed)
                ok = v.accepted
            except SizeError:
                ok = None
            p2["rows"].append({"guest": g, "role": role, "accepted": ok,
                               "density": cg.density()})
            if ok is False:
                p2["passed"] = False
        report["P2"] = p2

        # P3: triple intersections on sampled host edges of R_A pairs
        report["P3"] = self.verify_triple_intersections(
            eps, part="A", samples=triple_samples, seed=seed)

        # P4: labelling degree bound per role
        p4 = {"passed": True, "rows": []}
        for role in self.roles():
            d_i = self.densities["roles"].get(role)
            if d_i is None:
                continue
            got = psi_degree(self, role)
            bound = (1 + eps) * d_i * len(self.clusters[role])
            p4["rows"].append({"role": role, "degree": got, "bound": bound})
            if got > bound + 1e-9:
                p4["passed"] = False
        report["P4"] = p4
        report["passed"] = all(report[k]["passed"] for k in ("P1", "P2", "P4"))
        return report

    def verify_triple_intersections(self, eps: float, part: str = "A",
                                    samples: int = 30, seed: int = 0,
                                    d_scale: float = 1.0,
                                    candidacy: Optional[dict] = None) -> dict:
        """e_H(N_A(v_i), N_A(v_j)) windows on sampled host edges."""
        cand = candidacy if candidacy is not None else self.candidacy
        edges = self.ra_edges if part == "A" else self.rb_edges
        rng = derive_rng(seed, "p3")
        rows = []
        passed = True
        for i, j in sorted(edges):
            if i == 0 or j == 0:
                continue
            pair = self.host_pair(i, j)
            host_edges = list(pair.edges())
            if not host_edges:
                continue
            take = host_edges if len(host_edges) <= samples else \
                [host_edges[rng.randrange(len(host_edges))] for _ in range(samples)]
            d_i = self.densities["roles"].get(i, 0.0)
            d_j = self.densities["roles"].get(j, 0.0)
            for g, guest in enumerate(self.guests):
                cgi = cand.get((g, i))
                cgj = cand.get((g, j))
                if cgi is None or cgj is None:
                    continue
                ehij = _guest_edges_between(guest, i, j)
                if ehij == 0:
                    continue
                worst = None
                for vi_loc, vj_loc in take:
                    ni = _neighbourhood_x(cgi, vi_loc)
                    nj = _neighbourhood_x(cgj, vj_loc)
                    cnt = _guest_edges_between_sets(guest, ni, nj)
                    target = d_i * d_j * d_scale * ehij
                    dev = abs(cnt - target)
                    if worst is None or dev > worst[0]:
                        worst = (dev, cnt, target)
                if worst is not None:
                    ok = worst[0] <= eps * ehij + 1e-9
                    rows.append({"pair": [i, j], "guest": g, "count": worst[1],
                                 "target": worst[2], "tolerance": eps * ehij,
                                 "passed": ok})
                    if not ok:
                        passed = False
        return {"passed": passed, "rows": rows}


def _neighbourhood_x(cg: CandidacyGraph, v_loc: int) -> list[int]:
    out = []
    for xi, row in enumerate(cg.rows):
        if (row >> v_loc) & 1:
            out.append(cg.x_ids[xi])
    return out


def _guest_edges_between(guest: StepGuest, i: int, j: int) -> int:
    mi = list_to_mask(guest.clusters[i])
    mj = list_to_mask(guest.clusters[j])
    return guest.graph.edges_between(mi, mj)


def _guest_edges_between_sets(guest: StepGuest, xs: Sequence[int],
                              ys: Sequence[int]) -> int:
    return guest.graph.edges_between(list_to_mask(xs), list_to_mask(ys))


@dataclass
class ConflictFreePacking:
    """sigma: per-guest partial injections of X_0 into V_0."""

    maps: list[dict]  # per guest: {x: v}

    def edge_set(self) -> list[tuple[int, int, int]]:
        return [(g, x, v) for g, m in enumerate(self.maps)
                for x, v in sorted(m.items())]

    def domain_size(self, g: int) -> int:
        return len(self.maps[g])

    def check(self, inst: PackingInstance) -> None:
        """Exact conflict-freeness: per-guest injectivity and pairwise
        disjoint label sets."""
        seen_labels: set = set()
        for g, m in enumerate(self.maps):
            if len(set(m.values())) != len(m):
                raise CandidacyError(f"sigma not injective on guest {g}")
            for x, v in m.items():
                for lab in inst.psi.labels(g, 0, x, v):
                    if lab in seen_labels:
                        raise CandidacyError(
                            f"label {lab} consumed twice (guest {g}, "
                            f"x={x}, v={v})")
                    seen_labels.add(lab)


# ---------------------------------------------------------------------------
# enlargement, candidacy updates, niceness
# ---------------------------------------------------------------------------


def enlarge(guests: Sequence[StepGuest]) -> list[dict[int, tuple[int, bool]]]:
    """Partner maps of the enlarged collection.

    For each guest, returns {x: (x0, real)} pairing every non-exceptional
    vertex x with an X_0 vertex: real guest edges first, then a maximal
    artificial matching on the unmatched remainder, per role.
    """
    out = []
    for guest in guests:
        x0 = list(guest.clusters.get(0, ()))
        x0set = set(x0)
        partners: dict[int, tuple[int, bool]] = {}
        for role, cl in sorted(guest.clusters.items()):
            if role == 0:
                continue
            taken: set[int] = set()
            unmatched_x = []
            for x in cl:
                nbrs0 = [y for y in guest.graph.neighbors(x) if y in x0set]
                if len(nbrs0) > 1:
                    raise CandidacyError(
                        f"vertex {x} has {len(nbrs0)} X_0-neighbours; "
                        f"H[X_0, X_i] must be a matching")
                if nbrs0:
                    partners[x] = (nbrs0[0], True)
                    taken.add(nbrs0[0])
                else:
                    unmatched_x.append(x)
            free0 = [y for y in x0 if y not in taken]
            for x, y in zip(unmatched_x, free0):
                partners[x] = (y, False)
        out.append(partners)
    return out


def _anchor_mask(host: Graph, v_ids: tuple[int, ...], anchor: int,
                 cache: Optional[dict] = None) -> int:
    key = (v_ids, anchor)
    if cache is not None:
        got = cache.get(key)
        if got is not None:
            return got
    nm = host.neighbors_mask(anchor)
    mask = 0
    for vj, v in enumerate(v_ids):
        if (nm >> v) & 1:
            mask |= 1 << vj
    if cache is not None:
        cache[key] = mask
    return mask


def update_candidacy(cand: CandidacyGraph, sigma: dict[int, int], host: Graph,
                     guest: StepGuest,
                     mask_cache: Optional[dict] = None) -> CandidacyGraph:
    """Definition-faithful update: keep edge x-v iff x's unique matched
    X_0-neighbour x0 (when it exists) satisfies sigma(x0)-v in E(host)."""
    x0set = set(guest.clusters.get(0, ()))
    v_ids = cand.v_ids
    new_rows = list(cand.rows)
    for xi, x in enumerate(cand.x_ids):
        nbrs0 = [y for y in guest.graph.neighbors(x) if y in x0set]
        if len(nbrs0) > 1:
            raise CandidacyError(
                f"vertex {x} has two X_0-neighbours; matching structure "
                f"violated")
        if not nbrs0 or nbrs0[0] not in sigma:
            continue
        new_rows[xi] &= _anchor_mask(host, v_ids, sigma[nbrs0[0]], mask_cache)
    return CandidacyGraph(cand.x_ids, cand.v_ids, new_rows)


def _uniformizing_update(cand: CandidacyGraph, sigma: dict[int, int],
                         host: Graph, partners: dict[int, tuple[int, bool]],
                         thin: Optional[float], rng,
                         mask_cache: Optional[dict] = None) -> CandidacyGraph:
    """Step-internal update against the enlarged guest: embedded partners
    (real or artificial) constrain by host adjacency; partnerless or
    unembedded-partner vertices are randomly thinned at rate `thin` so the
    updated graph keeps a uniform density."""
    v_ids = cand.v_ids
    new_rows = list(cand.rows)
    for xi, x in enumerate(cand.x_ids):
        p = partners.get(x)
        if p is not None and p[0] in sigma:
            new_rows[xi] &= _anchor_mask(host, v_ids, sigma[p[0]], mask_cache)
        elif thin is not None:
            row = new_rows[xi]
            kept = 0
            m = row
            while m:
                b = m & -m
                if rng.random() < thin:
                    kept |= b
                m &= m - 1
            new_rows[xi] = kept
    return CandidacyGraph(cand.x_ids, cand.v_ids, new_rows)


def niceify(inst: PackingInstance, hplus: list[dict[int, tuple[int, bool]]],
            window: float, budget_fraction: float = 0.25) -> tuple[PackingInstance, dict]:
    """Delete candidacy and host edges violating the niceness windows.

    For every A_0 edge x0-v0 whose enlarged partner x (role i) exists:
    delete the A_0 edge unless |N_{A_i}(x) cap N_G(v0)| = (d_i d_Z +- w)|V_i|,
    and symmetrically delete A_i edges x-v whose partner x0 has
    |N_{A_0}(x0) cap N_G(v)| outside (d_0 d_Z +- w)|V_0|.  Host edges between
    two non-exceptional A-part roles are deleted when
    |N_G(v_i, v_j) cap V_0| lies outside (d_A^2 +- w)|V_0|.

    Raises InstanceDegradationError when any vertex loses more than
    budget_fraction of its incident candidacy edges.
    """
    d_roles = inst.densities["roles"]
    d_a = inst.densities["d_A"]
    census = {"A0_deleted": 0, "Ai_deleted": 0, "host_deleted": 0}
    new_cand = {k: cg.copy() for k, cg in inst.candidacy.items()}
    a_roles = set(inst.neighbour_roles("A"))
    v0_ids = inst.clusters[0]
    v0_mask = list_to_mask(v0_ids)
    d0 = d_roles.get(0, 0.0)
    host = inst.host

    def window_ok(cnt: int, dens: float, n: int) -> bool:
        return (dens - window) * n - 1e-9 <= cnt <= (dens + window) * n + 1e-9

    for g, guest in enumerate(inst.guests):
        cg0 = new_cand.get((g, 0))
        if cg0 is None:
            continue
        role_of = guest.role_of()
        partner_of_x0: dict[int, list[tuple[int, int]]] = {}
        for x, (x0, _real) in hplus[g].items():
            role = role_of.get(x)
            if role:
                partner_of_x0.setdefault(x0, []).append((x, role))
        x0_pos = cg0.x_pos()
        deleted_per_x0 = [0] * len(cg0.x_ids)

        # direction 1: bad A_0 edges; cached masks of N(v0) over each
        # role's v_ids make the window count one AND + popcount
        mask_into_role: dict[int, dict[int, int]] = {}

        def role_mask(role: int, v0: int) -> int:
            cache = mask_into_role.setdefault(role, {})
            got = cache.get(v0)
            if got is None:
                cgi = new_cand[(g, role)]
                nm = host.neighbors_mask(v0)
                mm = 0
                for k, v in enumerate(cgi.v_ids):
                    if (nm >> v) & 1:
                        mm |= 1 << k
                cache[v0] = got = mm
            return got

        for xi, x0 in enumerate(cg0.x_ids):
            row = cg0.rows[xi]
            if not row:
                continue
            for x, role in partner_of_x0.get(x0, ()):
                cgi = new_cand.get((g, role))
                if cgi is None:
                    continue
                xpos = cgi.x_pos().get(x)
                if xpos is None:
                    continue
                d_z = d_a if role in a_roles else inst.densities["d_B"]
                d_i = d_roles.get(role, 0.0)
                ni = len(cgi.v_ids)
                xrow = cgi.rows[xpos]
                m = row
                while m:
                    vj = (m & -m).bit_length() - 1
                    m &= m - 1
                    cnt = (xrow & role_mask(role, cg0.v_ids[vj])).bit_count()
                    if not window_ok(cnt, d_i * d_z, ni):
                        cg0.rows[xi] &= ~(1 << vj)
                        census["A0_deleted"] += 1
                        deleted_per_x0[xi] += 1

        # direction 2: bad A_i edges, same cache trick towards V_0
        mask_into_v0: dict[int, int] = {}

        def v0_mask(v: int) -> int:
            got = mask_into_v0.get(v)
            if got is None:
                nm = host.neighbors_mask(v)
                mm = 0
                for k, w in enumerate(cg0.v_ids):
                    if (nm >> w) & 1:
                        mm |= 1 << k
                mask_into_v0[v] = got = mm
            return got

        for x, (x0, _real) in hplus[g].items():
            role = role_of.get(x)
            if not role:
                continue
            cgi = new_cand.get((g, role))
            if cgi is None:
                continue
            xpos = cgi.x_pos().get(x)
            x0pos = x0_pos.get(x0)
            if xpos is None or x0pos is None:
                continue
            d_z = d_a if role in a_roles else inst.densities["d_B"]
            n0 = len(cg0.v_ids)
            x0row = cg0.rows[x0pos]
            m = cgi.rows[xpos]
            while m:
                vj = (m & -m).bit_length() - 1
                m &= m - 1
                c = (x0row & v0_mask(cgi.v_ids[vj])).bit_count()
                if not window_ok(c, d0 * d_z, n0):
                    cgi.rows[xpos] &= ~(1 << vj)
                    census["Ai_deleted"] += 1

        for xi, dele in enumerate(deleted_per_x0):
            orig = inst.candidacy[(g, 0)].rows[xi].bit_count()
            if orig and dele > budget_fraction * orig + 1e-9:
                raise InstanceDegradationError(
                    f"niceify deleted {dele}/{orig} candidacy edges at "
                    f"guest {g} x0={cg0.x_ids[xi]}")

    # (N2): host edges between two A-part roles with bad V_0 codegree
    new_host = host
    bad_host: list[tuple[int, int]] = []
    for i, j in sorted(inst.ra_edges):
        if i == 0 or j == 0:
            continue
        for v in inst.clusters[i]:
            nm = host.neighbors_mask(v)
            for w in inst.clusters[j]:
                if not (nm >> w) & 1:
                    continue
                cnt = (host.neighbors_mask(v) & host.neighbors_mask(w)
                       & v0_mask).bit_count()
                if not window_ok(cnt, d_a * d_a, len(v0_ids)):
                    bad_host.append((v, w))
    if bad_host:
        census["host_deleted"] = len(bad_host)
        new_host = host.minus(Graph.from_edges(host.n, bad_host))

    new_inst = PackingInstance(inst.guests, new_host, inst.clusters,
                               inst.ra_edges, inst.rb_edges, new_cand,
                               EdgeSetLabelling(new_host, inst.psi.anchors,
                                                inst.psi.overlay),
                               inst.densities)
    return new_inst, census


# ---------------------------------------------------------------------------
# auxiliary hypergraph
# ---------------------------------------------------------------------------


@dataclass
class AuxIndex:
    hypergraph: Hypergraph
    edge_origin: list[tuple[int, int, int]]  # aux edge -> (guest, x, v)
    s: int

    def origin_of(self, eid: int) -> tuple[int, int, int]:
        return self.edge_origin[eid]


def build_aux_hypergraph(inst: PackingInstance) -> AuxIndex:
    """One (s+2)-uniform hyperedge per A_0 candidacy edge.

    Vertices: per-guest X_0 vertices, per-guest copies of V_0, and the
    label universe, with per-edge artificial padding labels bringing every
    label set to size s.  Matchings of this hypergraph are exactly the
    conflict-free packings of the instance.
    """
    psi = inst.psi
    edge_rows: list[tuple[int, int, int, tuple]] = []
    s = 1
    label_carrier: dict = {}
    for g, cg in inst.candidacy_for_role(0):
        for xi, vi in cg.edges():
            x, v = cg.x_ids[xi], cg.v_ids[vi]
            labs = psi.labels(g, 0, x, v)
            for lab in labs:
                prev = label_carrier.get(lab)
                if prev is not None and prev != v:
                    raise LabellingError(
                        f"label {lab} appears at host vertices {prev} and "
                        f"{v}; star invariant violated")
                label_carrier[lab] = v
            s = max(s, len(labs))
            edge_rows.append((g, x, v, labs))

    vid: dict = {}

    def vertex_id(key) -> int:
        i = vid.get(key)
        if i is None:
            i = len(vid)
            vid[key] = i
        return i

    edges = []
    origin = []
    for idx, (g, x, v, labs) in enumerate(edge_rows):
        verts = [vertex_id(("x", g, x)), vertex_id(("v", g, v))]
        verts.extend(vertex_id(("lab", lab)) for lab in labs)
        for pad in range(s - len(labs)):
            verts.append(vertex_id(("pad", idx, pad)))
        edges.append(verts)
        origin.append((g, x, v))
    if not edges:
        return AuxIndex(Hypergraph(0, (), s + 2), [], s)
    h = Hypergraph(len(vid), tuple(frozenset(e) for e in edges), s + 2)
    return AuxIndex(h, origin, s)


def sigma_from_matching(aux: AuxIndex, matching: Sequence[int],
                        nguests: int) -> ConflictFreePacking:
    maps: list[dict] = [dict() for _ in range(nguests)]
    for eid in matching:
        g, x, v = aux.edge_origin[eid]
        maps[g][x] = v
    return ConflictFreePacking(maps)


def is_conflict_free(inst: PackingInstance, sigma: ConflictFreePacking) -> bool:
    try:
        sigma.check(inst)
        return True
    except CandidacyError:
        return False


# ---------------------------------------------------------------------------
# the approximate packing step
# ---------------------------------------------------------------------------


@dataclass
class StepReport:
    rows: list[dict]
    coverage: dict
    census: dict
    matcher: dict

    def passed(self, keys: Sequence[str] = ("I", "IV", "V")) -> bool:
        ok = all(r["passed"] for r in self.rows if r["conclusion"] in keys
                 and not r.get("vacuous", False))
        return ok and self.coverage["passed"]

    def row(self, key: str) -> dict:
        for r in self.rows:
            if r["conclusion"] == key:
                return r
        raise KeyError(key)

    def to_json(self) -> dict:
        return {"rows": self.rows, "coverage": self.coverage,
                "census": self.census, "matcher": self.matcher}


@dataclass
class StepOutcome:
    sigma: ConflictFreePacking
    new_candidacy: dict[tuple[int, int], CandidacyGraph]
    labelling: EdgeSetLabelling
    report: StepReport


@dataclass
class SetTester:
    """(W, Y_1..Y_l): W a set of role-0 host vertices; Y_j guest subsets."""

    w: tuple[int, ...]
    ys: tuple[tuple[int, tuple[int, ...]], ...]  # (guest, vertices)
    name: str = "set"


@dataclass
class EdgeTester:
    """Star-shaped weight on a candidacy union, centred at a host vertex or
    at one guest vertex per guest."""

    name: str
    role: int
    centre_v: Optional[int] = None
    centres_x: Optional[dict[int, int]] = None  # guest -> x
    weights: dict = field(default_factory=dict)  # (guest, x, v) -> weight

    def mass_on_candidacy(self, inst_cand: dict, role: int) -> float:
        total = 0.0
        for (key, wgt) in self.weights.items():
            g, x, v = key
            cg = inst_cand.get((g, role))
            if cg is None:
                continue
            xp = cg.x_pos().get(x)
            vp = cg.v_pos().get(v)
            if xp is None or vp is None:
                continue
            if (cg.rows[xp] >> vp) & 1:
                total += wgt
        return total

    def dim(self) -> int:
        guests = {g for (g, _x, _v) in self.weights}
        return 1 if len(guests) <= 1 else 2


def approximate_pack_step(inst: PackingInstance,
                          set_testers: Sequence[SetTester] = (),
                          edge_testers: Sequence[EdgeTester] = (),
                          params: Optional[dict] = None) -> StepOutcome:
    """One cluster-embedding round.

    Registers representative weight families, finds a conflict-free packing
    sigma via the hypergraph matcher, derives updated candidacy graphs
    (host-adjacency constraints from embedded enlarged partners, random
    thinning of unconstrained vertices), updates the labelling, and
    measures the step conclusions (I)-(VII).
    """
    params = dict(params or {})
    seed = int(params.get("seed", 0))
    eps_in = float(params.get("eps", 0.05))
    eps_out = float(params.get("eps_out", 3 * eps_in))
    coverage_min = float(params.get("coverage_min", 0.9))
    coverage_hard = float(params.get("coverage_hard", 0.5))
    do_niceify = bool(params.get("niceify", True))
    nice_window = float(params.get("nice_window", 3 * eps_in))
    cap_degree = params.get("cap_degree")
    nibble = dict(params.get("nibble", {}))
    nibble.setdefault("seed", derive_seed_int(seed, "nibble"))
    nibble.setdefault("restarts", 2)
    nibble.setdefault("bite_fraction", 0.15)
    nibble.setdefault("improve_limit", 256)
    uniformize_roles = params.get("uniformize_roles")
    if uniformize_roles is None:
        uniformize_roles = set(inst.neighbour_roles("A"))
    family_samples = int(params.get("family_samples", 4))

    hplus = enlarge(inst.guests)

    work0 = {k: cg.copy() for k, cg in inst.candidacy.items()}
    if cap_degree:
        rngcap = derive_rng(seed, "cap")
        for g, cg in list(_iter_role(work0, 0)):
            for xi, row in enumerate(cg.rows):
                deg = row.bit_count()
                if deg > cap_degree:
                    bits = mask_to_list(row)
                    keep = rngcap.sample(bits, cap_degree)
                    cg.rows[xi] = list_to_mask(keep)
    dens0 = dict(inst.densities)
    role_dens0 = dict(dens0.get("roles", {}))
    degs0 = [cg.density() for _g, cg in _iter_role(work0, 0)]
    if degs0:
        role_dens0[0] = sum(degs0) / len(degs0)
    dens0["roles"] = role_dens0
    inst = PackingInstance(inst.guests, inst.host, inst.clusters,
                           inst.ra_edges, inst.rb_edges, work0, inst.psi,
                           dens0)

    census = {}
    if do_niceify:
        inst, census = niceify(inst, hplus, nice_window)

    # precondition guards
    n0 = len(inst.clusters[0])
    for role in inst.neighbour_roles("A"):
        cg_codeg = psi_codegree(inst, role)
        if cg_codeg > (n0 ** 0.5) + 1e-9:
            raise StepFailure(
                f"psi codegree {cg_codeg} on role {role} exceeds sqrt(n)")
    eps_floor = float(params.get("pair_floor", 0.0))
    for g, guest in enumerate(inst.guests):
        for i, j in sorted(inst.ra_edges | inst.rb_edges):
            cnt = _guest_edges_between(guest, i, j)
            if cnt < eps_floor:
                raise StepFailure(
                    f"degenerate cluster pair ({i},{j}) on guest {g}: "
                    f"{cnt} < {eps_floor} edges")

    aux = build_aux_hypergraph(inst)
    if not aux.edge_origin:
        raise StepFailure("empty role-0 candidacy; nothing to embed")
    weights = _register_weights(inst, aux, set_testers, edge_testers,
                                family_samples, seed)
    report_matcher = find_matching(aux.hypergraph, weights, nibble)
    sigma = sigma_from_matching(aux, report_matcher.matching,
                                len(inst.guests))
    sigma.check(inst)  # conflict detected post-hoc must never happen

    coverage_rows = []
    cov_ok = True
    for g, guest in enumerate(inst.guests):
        size0 = len(guest.clusters.get(0, ()))
        got = sigma.domain_size(g)
        frac = got / size0 if size0 else 1.0
        coverage_rows.append({"guest": g, "embedded": got, "cluster": size0,
                              "fraction": frac,
                              "passed": frac >= coverage_min - 1e-9})
        if frac < coverage_hard - 1e-9:
            raise StepFailure(
                f"coverage shortfall on guest {g}: {got}/{size0}",
                None)
        if frac < coverage_min - 1e-9:
            cov_ok = False
    coverage = {"rows": coverage_rows, "passed": cov_ok,
                "min_required": coverage_min}

    # updated candidacy graphs
    d_a = inst.densities["d_A"]
    d_b = inst.densities["d_B"]
    new_cand: dict[tuple[int, int], CandidacyGraph] = {}
    rng_thin = derive_rng(seed, "thin")
    shared_cache: dict = {}
    for (g, role), cg in sorted(inst.candidacy.items()):
        if role == 0:
            continue
        is_a = role in set(inst.neighbour_roles("A"))
        if role in uniformize_roles:
            thin = d_a if is_a else d_b
            new_cand[(g, role)] = _uniformizing_update(
                cg, sigma.maps[g], inst.host, hplus[g], thin, rng_thin,
                shared_cache)
        else:
            new_cand[(g, role)] = update_candidacy(
                cg, sigma.maps[g], inst.host, inst.guests[g], shared_cache)
    new_psi = inst.psi.with_sigma(inst, sigma)

    rows = _step_conclusions(inst, sigma, new_cand, new_psi, eps_out,
                             set_testers, edge_testers, params, seed)
    report = StepReport(rows, coverage, census, report_matcher.to_json())
    return StepOutcome(sigma, new_cand, new_psi, report)


def derive_seed_int(seed: int, tag: str) -> int:
    from .rng import derive_seed

    return derive_seed(seed, tag)


def _iter_role(cand: dict, role: int):
    for (g, r), cg in cand.items():
        if r == role:
            yield g, cg


def _register_weights(inst: PackingInstance, aux: AuxIndex,
                      set_testers: Sequence[SetTester],
                      edge_testers: Sequence[EdgeTester],
                      family_samples: int, seed: int) -> list[TupleWeight]:
    """Coverage weights, set-tester tuples, edge-tester lifts, and seeded
    samples of the label/codegree control families."""
    by_edge: dict[tuple[int, int, int], int] = {
        ovn: i for i, ovn in enumerate(aux.edge_origin)}
    weights: list[TupleWeight] = []

    per_guest: dict[int, dict[int, float]] = {}
    for i, (gg, _x, _v) in enumerate(aux.edge_origin):
        per_guest.setdefault(gg, {})[i] = 1.0
    for g in range(len(inst.guests)):
        support = per_guest.get(g)
        if support:
            weights.append(TupleWeight(f"cover_g{g}", 1, 1.0, support))

    for t in set_testers:
        wset = set(t.w)
        stars = []
        ok = True
        for g, ys in t.ys:
            star = {}
            for i, (gg, x, v) in enumerate(aux.edge_origin):
                if gg == g and x in set(ys) and v in wset:
                    star[i] = 1.0
            if not star:
                ok = False
            stars.append(star)
        if ok and stars:
            weights.append(TupleWeight(t.name, len(stars), 1.0, tuple(stars)))

    for t in edge_testers:
        if t.role == 0:
            support = {}
            for (g, x, v), wgt in t.weights.items():
                eid = by_edge.get((g, x, v))
                if eid is not None:
                    support[eid] = wgt
            if support:
                weights.append(TupleWeight(t.name, 1, max(support.values()),
                                           support))
        else:
            lift = _lift_edge_tester(inst, aux, t)
            if lift:
                weights.append(TupleWeight(f"{t.name}_lift", 1,
                                           max(lift.values()), lift))

    # seeded samples of the omega_e / omega_{e,f} label-control families
    rng = derive_rng(seed, "families")
    labels_present: list = []
    for i, (g, x, v) in enumerate(aux.edge_origin):
        for lab in inst.psi.labels(g, 0, x, v):
            labels_present.append((lab, i))
    if labels_present and family_samples:
        rng.shuffle(labels_present)
        for k, (lab, _) in enumerate(labels_present[:family_samples]):
            support = {i: 1.0 for i, (g, x, v) in enumerate(aux.edge_origin)
                       if lab in inst.psi.labels(g, 0, x, v)}
            weights.append(TupleWeight(f"label_{k}", 1, 1.0, support))
    return weights


def _lift_edge_tester(inst: PackingInstance, aux: AuxIndex,
                      t: EdgeTester) -> dict:
    """omega_0 of the step proof: push a neighbour-role star down to A_0."""
    role = t.role
    lift: dict[int, float] = {}
    partner_back: dict[tuple[int, int], list[tuple[int, float]]] = {}
    for (g, x, v), wgt in t.weights.items():
        cg = inst.candidacy.get((g, role))
        if cg is None:
            continue
        xp = cg.x_pos().get(x)
        vp = cg.v_pos().get(v)
        if xp is None or vp is None or not (cg.rows[xp] >> vp) & 1:
            continue
        for y in inst.guests[g].graph.neighbors(x):
            if y in set(inst.guests[g].clusters.get(0, ())):
                partner_back.setdefault((g, y), []).append((v, wgt))
    for i, (g, x0, v0) in enumerate(aux.edge_origin):
        for (v_c, wgt) in partner_back.get((g, x0), ()):
            if inst.host.has_edge(v0, v_c):
                lift[i] = lift.get(i, 0.0) + wgt
    return lift


def _step_conclusions(inst: PackingInstance, sigma: ConflictFreePacking,
                      new_cand: dict, new_psi: EdgeSetLabelling,
                      eps_out: float, set_testers: Sequence[SetTester],
                      edge_testers: Sequence[EdgeTester], params: dict,
                      seed: int) -> list[dict]:
    from .regularity import SizeError, super_regularity_verdict

    rows: list[dict] = []
    n0 = len(inst.clusters[0])
    d_a = inst.densities["d_A"]
    d_b = inst.densities["d_B"]
    d_roles = inst.densities["roles"]
    d0 = d_roles.get(0, 0.0)
    a_roles = set(inst.neighbour_roles("A"))
    abs_tol = float(params.get("abs_tol", 0.1)) * n0

    # (I) super-regularity of the updated candidacy graphs
    sub = []
    all_ok = True
    for (g, role), cg in sorted(new_cand.items()):
        d_z = d_a if role in a_roles else d_b
        target = d_roles.get(role, 0.0) * d_z
        try:
            v = super_regularity_verdict(cg.to_pair(), eps_out, target,
                                         mode="codegree", seed=seed)
            ok = v.accepted
        except SizeError:
            ok = None
        sub.append({"guest": g, "role": role, "accepted": ok,
                    "target_density": target, "density": cg.density()})
        if ok is False:
            all_ok = False
    rows.append({"conclusion": "I", "passed": all_ok, "tolerance": eps_out,
                 "rows": sub})

    # (II) triple intersections at scaled densities
    p3 = inst.verify_triple_intersections(
        eps_out, part="A", samples=int(params.get("triple_samples", 20)),
        seed=seed, d_scale=d_a * d_a, candidacy=new_cand)
    rows.append({"conclusion": "II", "passed": p3["passed"],
                 "tolerance": eps_out, "rows": p3["rows"],
                 "vacuous": not p3["rows"]})

    # (III) edge-tester mass on updated candidacy unions
    sub = []
    ok3 = True
    for t in edge_testers:
        if t.role == 0 or t.role not in a_roles:
            continue
        before = t.mass_on_candidacy(inst.candidacy, t.role)
        after = t.mass_on_candidacy(new_cand, t.role)
        ndim = n0 ** t.dim()
        tol = eps_out ** 2 * d_a * before + eps_out ** 2 * ndim
        target = d_a * before
        passed = abs(after - target) <= tol + 1e-9
        sub.append({"tester": t.name, "before": before, "after": after,
                    "target": target, "tolerance": tol, "passed": passed})
        if not passed:
            ok3 = False
    rows.append({"conclusion": "III", "passed": ok3, "rows": sub,
                 "vacuous": not sub})

    # (IV) labelling degree on updated unions
    sub = []
    ok4 = True
    iv_slack = float(params.get("boundedness_slack", 0.1))
    for role in sorted(a_roles):
        tmp_inst = PackingInstance(inst.guests, inst.host, inst.clusters,
                                   inst.ra_edges, inst.rb_edges, new_cand,
                                   new_psi, inst.densities)
        got = psi_degree(tmp_inst, role, new_psi)
        bound = (1 + iv_slack) * d_roles.get(role, 0.0) * d_a * \
            len(inst.clusters[role])
        passed = got <= bound + 1e-9
        sub.append({"role": role, "degree": got, "bound": bound,
                    "passed": passed})
        if not passed:
            ok4 = False
    rows.append({"conclusion": "IV", "passed": ok4, "rows": sub})

    # (V) labelling codegree
    sub = []
    ok5 = True
    for role in sorted(a_roles):
        tmp_inst = PackingInstance(inst.guests, inst.host, inst.clusters,
                                   inst.ra_edges, inst.rb_edges, new_cand,
                                   new_psi, inst.densities)
        got = psi_codegree(tmp_inst, role, new_psi)
        bound = n0 ** 0.5
        passed = got <= bound + 1e-9
        sub.append({"role": role, "codegree": got, "bound": bound,
                    "passed": passed})
        if not passed:
            ok5 = False
    rows.append({"conclusion": "V", "passed": ok5, "rows": sub})

    # (VI) set testers
    sub = []
    ok6 = True
    for t in set_testers:
        wset = set(t.w)
        inter = None
        prod = len(t.w)
        for g, ys in t.ys:
            img = {sigma.maps[g][x] for x in ys if x in sigma.maps[g]}
            inter = img if inter is None else (inter & img)
            prod *= len(ys)
        got = len(wset & inter) if inter is not None else 0
        target = prod / (n0 ** len(t.ys)) if n0 else 0.0
        passed = abs(got - target) <= abs_tol + 1e-9
        sub.append({"tester": t.name, "count": got, "target": target,
                    "tolerance": abs_tol, "passed": passed})
        if not passed:
            ok6 = False
    rows.append({"conclusion": "VI", "passed": ok6, "rows": sub,
                 "vacuous": not sub})

    # (VII) edge testers centred in the embedded cluster
    sub = []
    ok7 = True
    for t in edge_testers:
        if t.role != 0:
            continue
        mass_e = t.mass_on_candidacy(inst.candidacy, 0)
        mass_m = sum(w for (g, x, v), w in t.weights.items()
                     if sigma.maps[g].get(x) == v)
        target = mass_e / (d0 * n0) if d0 > 0 and n0 else 0.0
        tol = eps_out * target + eps_out * n0
        passed = abs(mass_m - target) <= tol + 1e-9
        sub.append({"tester": t.name, "mass": mass_m, "target": target,
                    "tolerance": tol, "passed": passed})
        if not passed:
            ok7 = False
    rows.append({"conclusion": "VII", "passed": ok7, "rows": sub,
                 "vacuous": not sub})
    return rows
