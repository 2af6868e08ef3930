"""Blow-up instances: guests, host, reduced graph, aligned partitions.

The exceptional cluster has index 0; clusters 1..r are the working clusters.
`phi0` pre-embeds each guest's X_0 injectively into V_0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .graphs import BipartitePair, Graph, GraphError
from .jsonio import FORMAT_VERSION
from .rng import list_to_mask


class InstanceError(ValueError):
    pass


@dataclass(frozen=True)
class Guest:
    """One guest graph with its cluster partition (index 0..r)."""

    graph: Graph
    clusters: tuple[tuple[int, ...], ...]
    artificial_edges: frozenset[tuple[int, int]] = frozenset()

    def cluster_of(self) -> dict[int, int]:
        owner: dict[int, int] = {}
        for i, cl in enumerate(self.clusters):
            for x in cl:
                owner[x] = i
        return owner

    @property
    def r(self) -> int:
        return len(self.clusters) - 1

    def with_edges_added(self, extra: Sequence[tuple[int, int]],
                         artificial: bool) -> "Guest":
        g = Graph.from_edges(
            self.graph.n,
            list(self.graph.edges()) + list(extra))
        art = set(self.artificial_edges)
        if artificial:
            art |= {(min(u, v), max(u, v)) for u, v in extra}
        return Guest(g, self.clusters, frozenset(art))

    def real_graph(self) -> Graph:
        """Guest with artificial padding edges stripped."""
        if not self.artificial_edges:
            return self.graph
        edges = [e for e in self.graph.edges()
                 if (min(e), max(e)) not in self.artificial_edges]
        return Graph.from_edges(self.graph.n, edges)


@dataclass(frozen=True)
class ExtendedBlowUpInstance:
    guests: tuple[Guest, ...]
    host: Graph
    r: int
    reduced_edges: frozenset[tuple[int, int]]
    host_clusters: tuple[tuple[int, ...], ...]
    phi0: tuple[dict, ...]  # per guest: {x: v}

    def reduced_graph(self) -> Graph:
        return Graph.from_edges(self.r + 1,
                                [(i, j) for i, j in self.reduced_edges])

    def cluster_sizes(self) -> list[int]:
        return [len(c) for c in self.host_clusters]

    def pair(self, i: int, j: int) -> BipartitePair:
        """Host bipartite pair between clusters i and j, locally indexed."""
        vi = self.host_clusters[i]
        vj = self.host_clusters[j]
        jmask = {v: k for k, v in enumerate(vj)}
        rows = []
        for v in vi:
            m = 0
            nm = self.host.neighbors_mask(v)
            for w, k in jmask.items():
                if (nm >> w) & 1:
                    m |= 1 << k
            rows.append(m)
        return BipartitePair(len(vi), len(vj), tuple(rows))

    def to_json(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "r": self.r,
            "host": self.host.to_json(),
            "reduced_edges": sorted([min(e), max(e)] for e in self.reduced_edges),
            "host_partition": [list(c) for c in self.host_clusters],
            "guests": [
                {
                    "graph": g.graph.to_json(),
                    "partition": [list(c) for c in g.clusters],
                    "artificial_edges": sorted(list(e) for e in g.artificial_edges),
                }
                for g in self.guests
            ],
            "phi0": sorted(
                [gi, x, v]
                for gi, mapping in enumerate(self.phi0)
                for x, v in mapping.items()
            ),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ExtendedBlowUpInstance":
        guests = []
        for gobj in obj["guests"]:
            guests.append(Guest(
                Graph.from_json(gobj["graph"]),
                tuple(tuple(c) for c in gobj["partition"]),
                frozenset(tuple(e) for e in gobj.get("artificial_edges", [])),
            ))
        phi0: list[dict] = [dict() for _ in guests]
        for gi, x, v in obj.get("phi0", []):
            phi0[gi][x] = v
        return cls(
            tuple(guests),
            Graph.from_json(obj["host"]),
            int(obj["r"]),
            frozenset(tuple(sorted(e)) for e in obj["reduced_edges"]),
            tuple(tuple(c) for c in obj["host_partition"]),
            tuple(phi0),
        )


def check_structure(inst: ExtendedBlowUpInstance) -> list[str]:
    """Structural invariants; returns a list of violation strings."""
    errs: list[str] = []
    r = inst.r
    if len(inst.host_clusters) != r + 1:
        errs.append("host partition must have r+1 clusters")
        return errs
    seen: set[int] = set()
    for c in inst.host_clusters:
        for v in c:
            if v in seen:
                errs.append(f"host vertex {v} appears in two clusters")
            seen.add(v)
    if seen != set(range(inst.host.n)):
        errs.append("host partition must cover V(G) exactly")
    redg = inst.reduced_graph()
    for gi, g in enumerate(inst.guests):
        if len(g.clusters) != r + 1:
            errs.append(f"guest {gi}: partition must have r+1 clusters")
            continue
        gseen: set[int] = set()
        for cl in g.clusters:
            gseen.update(cl)
        if gseen != set(range(g.graph.n)):
            errs.append(f"guest {gi}: partition must cover V(H) exactly")
        for i in range(r + 1):
            if len(g.clusters[i]) != len(inst.host_clusters[i]):
                errs.append(
                    f"guest {gi}: |X_{i}| = {len(g.clusters[i])} != "
                    f"|V_{i}| = {len(inst.host_clusters[i])}")
        owner = g.cluster_of()
        for u, v in g.graph.edges():
            iu, iv = owner[u], owner[v]
            if iu == iv:
                errs.append(f"guest {gi}: cluster {iu} not independent "
                            f"(edge {u}-{v})")
            elif iu != 0 and iv != 0 and not redg.has_edge(iu, iv):
                errs.append(f"guest {gi}: edge {u}-{v} crosses "
                            f"({iu},{iv}) not in R")
        ph = inst.phi0[gi]
        if set(ph.keys()) != set(g.clusters[0]):
            errs.append(f"guest {gi}: phi0 domain must be X_0")
        if len(set(ph.values())) != len(ph):
            errs.append(f"guest {gi}: phi0 not injective")
        v0 = set(inst.host_clusters[0])
        for x, v in ph.items():
            if v not in v0:
                errs.append(f"guest {gi}: phi0({x}) = {v} outside V_0")
    return errs


def validate_extended_instance(inst: ExtendedBlowUpInstance, eps: float,
                               alpha: float, d: float,
                               mode: str = "codegree",
                               seed: int = 0) -> dict:
    """Full validation report: structure, super-regularity, linkedness.

    Each linkedness bullet is reported pass/fail with the first
    counterexample found.
    """
    from .regularity import super_regularity_verdict

    struct = check_structure(inst)
    report: dict = {"structure": {"passed": not struct, "violations": struct},
                    "eps": eps, "alpha": alpha, "d": d}
    if struct:
        raise InstanceError("; ".join(struct))

    pairs = {}
    for i, j in sorted(inst.reduced_edges):
        verdict = super_regularity_verdict(inst.pair(i, j), eps, d, mode,
                                           seed=seed)
        pairs[f"{i}-{j}"] = verdict.to_json()
    report["super_regularity"] = {
        "passed": all(v["accepted"] for v in pairs.values()),
        "pairs": pairs,
    }

    report["linkedness"] = _linkedness_report(inst, eps, alpha)
    report["passed"] = (report["super_regularity"]["passed"]
                        and report["linkedness"]["passed"])
    return report


def _linkedness_report(inst: ExtendedBlowUpInstance, eps: float,
                       alpha: float) -> dict:
    host = inst.host
    r = inst.r
    bullets = {}

    # (1) at most eps |X_i| vertices of X_i with a neighbour in X_0
    b1 = {"passed": True}
    for gi, g in enumerate(inst.guests):
        x0 = set(g.clusters[0])
        for i in range(1, r + 1):
            cnt = sum(1 for x in g.clusters[i]
                      if any(y in x0 for y in g.graph.neighbors(x)))
            if cnt > eps * len(g.clusters[i]) + 1e-9:
                b1 = {"passed": False,
                      "witness": {"guest": gi, "cluster": i, "count": cnt,
                                  "bound": eps * len(g.clusters[i])}}
                break
        if not b1["passed"]:
            break
    bullets["attachment_sparsity"] = b1

    # (2) restricted candidate pools keep at least alpha |V_i| options
    b2 = {"passed": True}
    for gi, g in enumerate(inst.guests):
        ph = inst.phi0[gi]
        x0 = set(g.clusters[0])
        for i in range(1, r + 1):
            vmask = list_to_mask(inst.host_clusters[i])
            for x in g.clusters[i]:
                anchors = [ph[y] for y in g.graph.neighbors(x) if y in x0]
                if not anchors:
                    continue
                pool = vmask
                for v0 in anchors:
                    pool &= host.neighbors_mask(v0)
                if pool.bit_count() < alpha * len(inst.host_clusters[i]) - 1e-9:
                    b2 = {"passed": False,
                          "witness": {"guest": gi, "vertex": x, "cluster": i,
                                      "pool": pool.bit_count(),
                                      "bound": alpha * len(inst.host_clusters[i])}}
                    break
            if not b2["passed"]:
                break
        if not b2["passed"]:
            break
    bullets["candidate_pools"] = b2

    # (3) |phi0^{-1}(v)| <= eps |H| for every v in V_0
    b3 = {"passed": True}
    preimage: dict[int, int] = {}
    for mapping in inst.phi0:
        for v in mapping.values():
            preimage[v] = preimage.get(v, 0) + 1
    nguests = len(inst.guests)
    for v, cnt in sorted(preimage.items()):
        if cnt > eps * nguests + 1e-9:
            b3 = {"passed": False,
                  "witness": {"host_vertex": v, "count": cnt,
                              "bound": eps * nguests}}
            break
    bullets["preimage_spread"] = b3

    # (4) common X_i-neighbourhoods of two V_0 preimages are tiny
    b4 = {"passed": True}
    v0 = list(inst.host_clusters[0])
    for a_idx in range(len(v0)):
        for b_idx in range(a_idx + 1, len(v0)):
            va, vb = v0[a_idx], v0[b_idx]
            for i in range(1, r + 1):
                total = 0
                for gi, g in enumerate(inst.guests):
                    inv = {v: x for x, v in inst.phi0[gi].items()}
                    xa, xb = inv.get(va), inv.get(vb)
                    if xa is None or xb is None:
                        continue
                    common = (g.graph.neighbors_mask(xa)
                              & g.graph.neighbors_mask(xb))
                    ci = list_to_mask(g.clusters[i])
                    total += (common & ci).bit_count()
                bound = eps * (len(inst.host_clusters[i]) ** 0.5)
                if total > bound + 1e-9:
                    b4 = {"passed": False,
                          "witness": {"v0": va, "v0p": vb, "cluster": i,
                                      "count": total, "bound": bound}}
                    break
            if not b4["passed"]:
                break
        if not b4["passed"]:
            break
    bullets["codegree_into_clusters"] = b4

    return {"passed": all(b["passed"] for b in bullets.values()),
            "bullets": bullets}
