"""Pipeline drivers: full packing of a guest collection into a host.

`pack_extended` refines guests and host, pads refined pairs into usable
matchings, and hands over to `pack_matching_case`, which gamma-splits the
host, walks the clusters in an R^3-colouring order calling the approximate
packing step, and completes the leftovers out of the reserved slice with
the single-guest embedder.  `verify_result` re-checks everything from
scratch and never trusts pipeline bookkeeping.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from .candidacy import (
    CandidacyGraph,
    EdgeSetLabelling,
    EdgeTester,
    PackingInstance,
    SetTester,
    StepFailure,
    StepGuest,
    approximate_pack_step,
)
from .embedder import EmbeddingFailure, EmbeddingTask, embed_single
from .graphs import Graph
from .instances import ExtendedBlowUpInstance, Guest, check_structure
from .jsonio import FORMAT_VERSION
from .rng import derive_rng, derive_seed, list_to_mask, mask_to_list
from .splitter import RefinedPartition, SplitConfig, refine_collection


class PackError(RuntimeError):
    def __init__(self, msg: str, stage: str = "", detail: Optional[dict] = None):
        super().__init__(msg)
        self.stage = stage
        self.detail = detail or {}


@dataclass
class PipelineConfig:
    seed: int = 0
    beta_inv: int = 2
    quasi_beta_inv: int = 4
    gamma: float = 0.22
    mu: float = 0.2
    eps0: float = 0.04
    kappa: float = 1.5
    eps_cap: float = 0.3
    alpha: float = 0.25
    cap_degree: int = 14
    alpha_a: float = 1.0
    alpha_b: float = 1.0
    coverage_min: float = 0.9
    coverage_hard: float = 0.45
    segment_len: int = 6
    mu_growth: float = 1.3
    pad_target: Optional[int] = None
    step_retries: int = 3
    split_retries: int = 8
    host_refine_retries: int = 8
    completion_retries: int = 14
    pack_retries: int = 2
    nibble: dict = field(default_factory=lambda: {
        "restarts": 2, "bite_fraction": 0.15, "rounds": 24,
        "improve_limit": 0})
    tolerances: dict = field(default_factory=dict)

    def eps_at(self, colour: int) -> float:
        return min(self.eps0 * (self.kappa ** colour), self.eps_cap)

    def tol(self, key: str, default: float) -> float:
        return float(self.tolerances.get(key, default))

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in obj.items() if k in known})


@dataclass
class PackingResult:
    phi: list[dict]               # per guest: {x: host vertex}
    valid: bool
    report: dict
    timings: dict
    seed: int
    config: dict

    def to_json(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "phi": [sorted([x, v] for x, v in m.items()) for m in self.phi],
            "valid": self.valid,
            "report": self.report,
            "timings": {k: round(v, 4) for k, v in self.timings.items()},
            "seed": self.seed,
            "config": self.config,
        }


@dataclass
class InductionLedger:
    rows: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"format": FORMAT_VERSION, "steps": self.rows}


# ---------------------------------------------------------------------------
# gamma split and initial candidacy
# ---------------------------------------------------------------------------



def noise_eps(d: float, n: int, z: float = 3.8) -> float:
    """Degree-window width that a p=d binomial on n trials stays inside with
    margin z sigma; verification at desk scale uses max(requested, this)."""
    if n <= 1:
        return 1.0
    import math

    return z * math.sqrt(max(d * (1 - d), 1e-9) / n) + 2.0 / n


def _gamma_split(inst: ExtendedBlowUpInstance, cfg: PipelineConfig,
                 seed: int) -> tuple[Graph, Graph, dict]:
    """Split host edges into the packing slice G_A and completion slice G_B,
    verifying super-regularity of both slices on every reduced edge."""
    from .regularity import SizeError, super_regularity_verdict

    d = _estimate_density(inst)
    d_a, d_b = (1 - cfg.gamma) * d, cfg.gamma * d
    n_min = min((len(c) for c in inst.host_clusters[1:]), default=1)
    eps_a = cfg.tol("gamma_split_eps", max(2 * cfg.eps0, noise_eps(d_a, n_min)))
    eps_b = cfg.tol("gamma_split_eps", max(2 * cfg.eps0, noise_eps(d_b, n_min)))
    n = inst.host.n
    for attempt in range(cfg.split_retries):
        rng = derive_rng(seed, "gamma", attempt)
        rows_a = [0] * n
        rows_b = [0] * n
        for u, v in inst.host.edges():
            if rng.random() < cfg.gamma:
                rows_b[u] |= 1 << v
                rows_b[v] |= 1 << u
            else:
                rows_a[u] |= 1 << v
                rows_a[v] |= 1 << u
        ga = Graph(n, tuple(rows_a))
        gb = Graph(n, tuple(rows_b))
        ok = True
        pair_report = {}
        for i, j in sorted(inst.reduced_edges):
            for tag, g, dz, eps in (("A", ga, d_a, eps_a),
                                    ("B", gb, d_b, eps_b)):
                sub = _slice_pair(g, inst.host_clusters[i],
                                  inst.host_clusters[j])
                try:
                    v = super_regularity_verdict(sub, eps, dz, mode="codegree")
                    pair_report[f"{tag}:{i}-{j}"] = v.accepted
                    if not v.accepted:
                        ok = False
                except SizeError:
                    pair_report[f"{tag}:{i}-{j}"] = None
        if ok:
            return ga, gb, {"attempt": attempt, "d": d, "d_A": d_a,
                            "d_B": d_b, "pairs": pair_report}
    raise PackError("gamma split verification failed after retries",
                    "gamma-split", {"pairs": pair_report})


def _slice_pair(g: Graph, vi: Sequence[int], vj: Sequence[int]):
    from .graphs import BipartitePair

    pos = {v: k for k, v in enumerate(vj)}
    rows = []
    for v in vi:
        m = 0
        nm = g.neighbors_mask(v)
        for w, k in pos.items():
            if (nm >> w) & 1:
                m |= 1 << k
        rows.append(m)
    return BipartitePair(len(vi), len(vj), tuple(rows))


def _estimate_density(inst: ExtendedBlowUpInstance) -> float:
    total, pairs = 0.0, 0
    for i, j in inst.reduced_edges:
        vi, vj = inst.host_clusters[i], inst.host_clusters[j]
        if not vi or not vj:
            continue
        e = inst.host.edges_between(list_to_mask(vi), list_to_mask(vj))
        total += e / (len(vi) * len(vj))
        pairs += 1
    return total / pairs if pairs else 0.0


def _initial_candidacy(inst: ExtendedBlowUpInstance, slice_graph: Graph,
                       alpha_z: float, seed: int, tag: str
                       ) -> dict[tuple[int, int], CandidacyGraph]:
    """Claim-5.2-style initial candidacy graphs on one slice: vertices with
    exceptional neighbours are restricted to the common slice-neighbourhood
    of their pre-images; everything else starts complete, then an optional
    alpha_z sparsification equalizes the two parts."""
    cand: dict[tuple[int, int], CandidacyGraph] = {}
    rng = derive_rng(seed, "init-cand", tag)
    for g, guest in enumerate(inst.guests):
        ph = inst.phi0[g]
        x0set = set(guest.clusters[0])
        for i in range(1, inst.r + 1):
            v_ids = inst.host_clusters[i]
            full = (1 << len(v_ids)) - 1
            rows = []
            for x in guest.clusters[i]:
                anchors = [ph[y] for y in guest.graph.neighbors(x)
                           if y in x0set]
                if anchors:
                    m = full
                    for a in anchors:
                        nm = slice_graph.neighbors_mask(a)
                        mm = 0
                        for k, v in enumerate(v_ids):
                            if (nm >> v) & 1:
                                mm |= 1 << k
                        m &= mm
                    rows.append(m)
                elif alpha_z >= 1.0:
                    rows.append(full)
                else:
                    m = 0
                    for k in range(len(v_ids)):
                        if rng.random() < alpha_z:
                            m |= 1 << k
                    rows.append(m)
            cand[(g, i)] = CandidacyGraph(tuple(guest.clusters[i]),
                                          tuple(v_ids), rows)
    return cand


# ---------------------------------------------------------------------------
# colouring
# ---------------------------------------------------------------------------


def _colour_r3(reduced: Graph) -> dict[int, int]:
    """Greedy proper colouring of R^3 on descending degree; vertex 0 (the
    exceptional cluster) is skipped."""
    r3 = reduced.power(3)
    order = sorted((v for v in range(1, reduced.n)),
                   key=lambda v: (-r3.degree(v), v))
    colour: dict[int, int] = {}
    for v in order:
        used = {colour[w] for w in r3.neighbors(v) if w in colour}
        c = 1
        while c in used:
            c += 1
        colour[v] = c
    return colour


def _assert_colouring(reduced: Graph, colour: dict[int, int],
                      order: Sequence[int]) -> None:
    r3 = reduced.power(3)
    for v in order:
        for w in r3.neighbors(v):
            if w in colour and w != v and colour[w] == colour[v]:
                raise AssertionError(f"colouring not proper on R^3: {v},{w}")
    seq = [colour[v] for v in order]
    if seq != sorted(seq):
        raise AssertionError("processing order not non-decreasing in colour")


# ---------------------------------------------------------------------------
# the matching case
# ---------------------------------------------------------------------------


def pack_matching_case(inst: ExtendedBlowUpInstance,
                       set_testers: Sequence[dict] = (),
                       vertex_testers: Sequence[dict] = (),
                       cfg: Optional[PipelineConfig] = None,
                       ledger_out: Optional[InductionLedger] = None
                       ) -> PackingResult:
    """Pack a collection whose cluster pairs are matchings.

    set_testers: [{"cluster": i, "W": [host ids], "Ys": [[guest, [ids]],..]}]
    vertex_testers: [{"v": host id, "cluster": i, "weights": {(g,x): w}}]
    """
    cfg = cfg or PipelineConfig()
    t0 = time.time()
    timings: dict = {}
    ledger = ledger_out if ledger_out is not None else InductionLedger()

    errs = check_structure(inst)
    if errs:
        raise PackError("; ".join(errs), "structure")
    _check_matching_shape(inst)

    ga, gb, split_info = _gamma_split(inst, cfg, cfg.seed)
    timings["gamma_split"] = time.time() - t0
    d_a, d_b = split_info["d_A"], split_info["d_B"]

    a_cand = _initial_candidacy(inst, ga, cfg.alpha_a, cfg.seed, "A")
    b_cand = _initial_candidacy(inst, gb, cfg.alpha_b, cfg.seed, "B")

    reduced = inst.reduced_graph()
    colour = _colour_r3(reduced)
    order = sorted(range(1, inst.r + 1), key=lambda v: (colour[v], v))
    _assert_colouring(reduced, colour, order)
    ncolours = max(colour.values(), default=0)

    host_n = inst.host.n
    gplus = _plus_graph(ga, gb, host_n)
    plus_guests = [_plus_guest(g.graph) for g in inst.guests]

    phi: list[dict] = [dict(inst.phi0[g]) for g in range(len(inst.guests))]
    dens_a = {i: cfg.alpha_a for i in range(1, inst.r + 1)}
    dens_b = {i: cfg.alpha_b for i in range(1, inst.r + 1)}
    m_count = {i: 0 for i in range(1, inst.r + 1)}
    c_max = {i: 0 for i in range(1, inst.r + 1)}
    processed: set[int] = set()

    t_steps = time.time()
    for t, s in enumerate(order):
        eps_in = cfg.eps_at(max(colour[s] - 1, 0))
        eps_out = cfg.eps_at(colour[s])
        nbrs = set(reduced.neighbors(s)) - {0}
        a_roles = sorted(nbrs - processed)
        b_roles = sorted(nbrs)

        outcome = None
        fail = None
        for attempt in range(cfg.step_retries):
            step_seed = derive_seed(cfg.seed, "step", s, attempt)
            try:
                outcome = _run_step(inst, cfg, s, a_roles, b_roles, phi,
                                    a_cand, b_cand, dens_a, dens_b, d_a, d_b,
                                    gplus, plus_guests, host_n, set_testers,
                                    vertex_testers, eps_in, eps_out,
                                    step_seed)
                break
            except StepFailure as exc:
                fail = exc
        if outcome is None:
            raise PackError(f"cluster {s}: {fail}", f"step-{s}",
                            {"ledger": ledger.to_json()})
        sigma, new_a, new_b, step_report = outcome

        for g in range(len(inst.guests)):
            phi[g].update(sigma.maps[g])
        for (g, i), cgnew in new_a.items():
            a_cand[(g, i)] = cgnew
        for (g, i), cgnew in new_b.items():
            b_cand[(g, i)] = cgnew
        # recurrences (5.4)-style; densities re-measured after the update
        touched_a = {i for (_g, i) in new_a}
        touched_b = {i for (_g, i) in new_b}
        for i in touched_a:
            rows = [a_cand[(g, i)].density() for g in range(len(inst.guests))]
            dens_a[i] = sum(rows) / len(rows)
        for i in touched_b:
            rows = [b_cand[(g, i)].density() for g in range(len(inst.guests))]
            dens_b[i] = sum(rows) / len(rows)
        for i in nbrs:
            m_count[i] += 1
            prev = c_max[i]
            c_max[i] = max(c_max[i], colour[s])
            if c_max[i] != max(prev, colour[s]):
                raise AssertionError("colour recurrence broken")
        processed.add(s)

        ledger.rows.append(_ledger_row(
            inst, cfg, t, s, colour, m_count, c_max, phi, a_cand, b_cand,
            dens_a, dens_b, step_report, set_testers, vertex_testers,
            processed))
    timings["induction"] = time.time() - t_steps

    t_comp = time.time()
    gcirc_rows = [0] * host_n
    completion_report = []
    guest_order = sorted(
        range(len(inst.guests)),
        key=lambda g: -sum(1 for i in range(1, inst.r + 1)
                           for x in inst.guests[g].clusters[i]
                           if x not in phi[g]))
    for g in guest_order:
        rep = _complete_guest(inst, cfg, g, phi, b_cand, gb, gcirc_rows,
                              derive_seed(cfg.seed, "completion", g))
        completion_report.append(rep)
    timings["completion"] = time.time() - t_comp

    report = {
        "gamma_split": split_info,
        "colours": {str(k): v for k, v in colour.items()},
        "order": order,
        "ncolours": ncolours,
        "completion": completion_report,
        "ledger_steps": len(ledger.rows),
    }
    result = PackingResult([dict(m) for m in phi], True, report, timings,
                           cfg.seed, cfg.to_json())
    return result


def _check_matching_shape(inst: ExtendedBlowUpInstance) -> None:
    for g, guest in enumerate(inst.guests):
        owner = guest.cluster_of()
        seen: dict[tuple[int, int, int], int] = {}
        for u, v in guest.graph.edges():
            iu, iv = owner[u], owner[v]
            if iu == 0 or iv == 0:
                continue
            for x, i, j in ((u, iu, iv), (v, iv, iu)):
                key = (x, i, j)
                seen[key] = seen.get(key, 0) + 1
                if seen[key] > 1:
                    raise PackError(
                        f"guest {g}: H[X_{i},X_{j}] is not a matching at "
                        f"vertex {x}", "matching-shape")


def _plus_graph(ga: Graph, gb: Graph, host_n: int) -> Graph:
    rows = [0] * (2 * host_n)
    for u in range(host_n):
        rows[u] |= ga.neighbors_mask(u)
    for u, v in gb.edges():
        rows[u] |= 1 << (host_n + v)
        rows[host_n + v] |= 1 << u
        rows[v] |= 1 << (host_n + u)
        rows[host_n + u] |= 1 << v
    return Graph(2 * host_n, tuple(rows))


def _plus_guest(graph: Graph) -> Graph:
    gn = graph.n
    rows = [0] * (2 * gn)
    for u in range(gn):
        rows[u] |= graph.neighbors_mask(u)
    for u, v in graph.edges():
        rows[u] |= 1 << (gn + v)
        rows[gn + v] |= 1 << u
        rows[v] |= 1 << (gn + u)
        rows[gn + u] |= 1 << v
    return Graph(2 * gn, tuple(rows))


def _run_step(inst, cfg, s, a_roles, b_roles, phi, a_cand, b_cand,
              dens_a, dens_b, d_a, d_b, gplus, plus_guests, host_n,
              set_testers, vertex_testers, eps_in, eps_out, step_seed):
    reduced = inst.reduced_graph()
    guests_step = []
    cand_step: dict[tuple[int, int], CandidacyGraph] = {}
    anchors: dict = {}
    for g, guest in enumerate(inst.guests):
        gn = guest.graph.n
        clusters = {0: tuple(guest.clusters[s])}
        for i in a_roles:
            clusters[i] = tuple(guest.clusters[i])
        for i in b_roles:
            clusters[-i] = tuple(gn + x for x in guest.clusters[i])
        guests_step.append(StepGuest(plus_guests[g], clusters))

        cand_step[(g, 0)] = a_cand[(g, s)].copy()
        for i in a_roles:
            cand_step[(g, i)] = a_cand[(g, i)].copy()
        for i in b_roles:
            base = b_cand[(g, i)]
            cand_step[(g, -i)] = CandidacyGraph(
                tuple(gn + x for x in base.x_ids),
                tuple(host_n + v for v in base.v_ids),
                list(base.rows))
        # anchors: images of embedded real neighbours
        for role, cl in ((0, guest.clusters[s]),
                         *[(i, guest.clusters[i]) for i in a_roles]):
            for x in cl:
                anc = tuple(phi[g][y] for y in guest.graph.neighbors(x)
                            if y in phi[g])
                if anc:
                    anchors[(g, role, x)] = anc

    ra = {(0, i) for i in a_roles}
    for i in a_roles:
        for j in a_roles:
            if i < j and reduced.has_edge(i, j):
                ra.add((i, j))
    rb = {tuple(sorted((0, -i))) for i in b_roles}
    roles_d = {0: dens_a[s]}
    for i in a_roles:
        roles_d[i] = dens_a[i]
    for i in b_roles:
        roles_d[-i] = dens_b[i]
    clusters_step = {0: tuple(inst.host_clusters[s])}
    for i in a_roles:
        clusters_step[i] = tuple(inst.host_clusters[i])
    for i in b_roles:
        clusters_step[-i] = tuple(host_n + v for v in inst.host_clusters[i])

    psi = EdgeSetLabelling(gplus, anchors)
    step_inst = PackingInstance(
        tuple(guests_step), gplus, clusters_step, frozenset(ra),
        frozenset(rb), cand_step, psi,
        {"d_A": d_a, "d_B": d_b, "roles": roles_d})

    st = [SetTester(tuple(t["W"]), tuple((g, tuple(y)) for g, y in t["Ys"]),
                    t.get("name", "set"))
          for t in set_testers if t["cluster"] == s]
    et = []
    for t in vertex_testers:
        role = t["cluster"] if t["cluster"] in a_roles else (
            0 if t["cluster"] == s else None)
        if role is None:
            continue
        weights = {(g, x, t["v"]): w for (g, x), w in t["weights"].items()}
        et.append(EdgeTester(t.get("name", "vt"), role, t["v"],
                             None, weights))

    # adaptive uniformization: thin a role artificially only while the
    # density spread of a genuine-only update would overflow the (I) window
    slack = cfg.tol("uniformize_slack", 1.0) * eps_out
    uniformize = {i for i in a_roles if dens_a[i] * (1 - d_a) > slack}

    outcome = approximate_pack_step(step_inst, st, et, params={
        "seed": step_seed,
        "eps": eps_in,
        "eps_out": eps_out,
        "coverage_min": cfg.coverage_min,
        "coverage_hard": cfg.coverage_hard,
        "cap_degree": cfg.cap_degree,
        "niceify": cfg.tolerances.get("niceify", True),
        "nice_window": cfg.tol("nice_window", max(3 * eps_in, 0.3)),
        "nibble": dict(cfg.nibble),
        "uniformize_roles": uniformize,
        "boundedness_slack": cfg.tol("boundedness_slack", 0.2),
        "abs_tol": cfg.tol("abs_tol", 0.1),
    })

    sigma = outcome.sigma
    new_a = {}
    new_b = {}
    for (g, role), cg in outcome.new_candidacy.items():
        if role > 0:
            new_a[(g, role)] = cg
        else:
            i = -role
            gn = inst.guests[g].graph.n
            new_b[(g, i)] = CandidacyGraph(
                tuple(x - gn for x in cg.x_ids),
                tuple(v - host_n for v in cg.v_ids),
                list(cg.rows))
    return sigma, new_a, new_b, outcome.report


def _ledger_row(inst, cfg, t, s, colour, m_count, c_max, phi, a_cand, b_cand,
                dens_a, dens_b, step_report, set_testers, vertex_testers,
                processed) -> dict:
    """S(t)-style checks with measured values; enforcement happened inside
    the step, these rows are the audit trail."""
    nguests = len(inst.guests)
    n = max(len(c) for c in inst.host_clusters[1:]) if inst.r else 0
    row: dict = {"t": t, "cluster": s, "colour": colour[s],
                 "m": dict(m_count), "c": dict(c_max)}
    row["step"] = step_report.to_json()

    # (e): leftover-degree health on processed clusters
    counts: dict[int, int] = {}
    nbr_counts: dict[int, int] = {}
    for g, guest in enumerate(inst.guests):
        unembedded = {x for i in processed for x in guest.clusters[i]
                      if x not in phi[g]}
        for x, v in phi[g].items():
            counts[v] = counts.get(v, 0) + 1
        for x in unembedded:
            for y in guest.graph.neighbors(x):
                v = phi[g].get(y)
                if v is not None:
                    nbr_counts[v] = nbr_counts.get(v, 0) + 1
    max_parked = max(nbr_counts.values(), default=0)
    eps_c = cfg.eps_at(colour[s])
    row["leftover"] = {
        "max_preimage_nbrs_of_unembedded": max_parked,
        "bound": eps_c ** 0.5 * n,
        "passed": max_parked <= eps_c ** 0.5 * n + 1e-9,
        "min_preimage": min((counts.get(v, 0)
                             for i in processed
                             for v in inst.host_clusters[i]), default=0),
        "guest_count": nguests,
    }

    # (g)/(h): partial tester concentration on processed clusters
    srows = []
    for tst in set_testers:
        if tst["cluster"] not in processed:
            continue
        wset = set(tst["W"])
        inter = None
        prod = len(wset)
        for g, ys in tst["Ys"]:
            img = {phi[g][x] for x in ys if x in phi[g]}
            inter = img if inter is None else inter & img
            prod *= len(ys)
        got = len(wset & inter) if inter is not None else 0
        target = prod / (n ** len(tst["Ys"])) if n else 0
        srows.append({"name": tst.get("name", "set"), "count": got,
                      "target": target,
                      "passed": abs(got - target) <= cfg.alpha * n / 2 + 1e-9})
    row["set_testers"] = srows
    vrows = []
    for tst in vertex_testers:
        if tst["cluster"] not in processed:
            continue
        v = tst["v"]
        got = sum(w for (g, x), w in tst["weights"].items()
                  if phi[g].get(x) == v)
        total = sum(tst["weights"].values())
        target = total / n if n else 0
        vrows.append({"name": tst.get("name", "vt"), "mass": got,
                      "target": target,
                      "passed": abs(got - target) <= cfg.alpha * n / 2 + 1e-9})
    row["vertex_testers"] = vrows
    return row


# ---------------------------------------------------------------------------
# completion
# ---------------------------------------------------------------------------


def _complete_guest(inst, cfg: PipelineConfig, g: int, phi: list[dict],
                    b_cand, gb: Graph, gcirc_rows: list[int],
                    seed: int) -> dict:
    """Unembed a structured batch around the holes plus a mu-fraction of
    segments, then re-embed it into the completion slice avoiding used
    edges."""
    guest = inst.guests[g]
    real = guest.real_graph()
    pg = phi[g]
    r = inst.r
    holes = {i: [x for x in guest.clusters[i] if x not in pg]
             for i in range(1, r + 1)}
    total_holes = sum(len(h) for h in holes.values())
    if total_holes == 0 and cfg.mu <= 0:
        return {"guest": g, "status": "noop", "holes": 0}

    host_n = inst.host.n
    mu = cfg.mu
    last_err: Optional[str] = None
    for attempt in range(cfg.completion_retries):
        rng = derive_rng(seed, "batch", attempt)
        batch = _draw_batch(inst, real, guest, pg, holes, mu, cfg, rng,
                            gcirc_rows)
        # dissolve starved constraints: when a batch vertex has too few
        # fresh-slice candidates, unembed the anchors that pin it down
        task = back = hyp = None
        for _round in range(5):
            task, back, hyp = _build_completion_task(
                inst, real, guest, pg, batch, gb, gcirc_rows, host_n, cfg)
            if task is None:
                break
            starved = hyp.get("starved", ())
            if not starved:
                break
            batch_all = {x for i in batch for x in batch[i]}
            grew = False
            owner = guest.cluster_of()
            for x in starved:
                for y in real.neighbors(x):
                    if y not in batch_all and y in pg and owner.get(y, 0) != 0:
                        batch[owner[y]] = sorted(set(batch[owner[y]]) | {y})
                        grew = True
            if not grew:
                break
        if task is None:
            last_err = "empty batch"
            break
        try:
            raw = embed_single(task, {
                "seed": derive_seed(seed, "embed", attempt),
                "restarts": 8, "exhaustive_limit": 0})
            phi_new = {back[x]: v for x, v in raw.items()}
        except EmbeddingFailure as exc:
            last_err = str(exc)
            mu = min(0.45, mu * cfg.mu_growth)
            continue
        # merge and account used slice edges
        for i in range(1, r + 1):
            for x in batch[i]:
                if x in pg:
                    del pg[x]
        pg.update(phi_new)
        batch_all = {x for i in range(1, r + 1) for x in batch[i]}
        for x in batch_all:
            vx = pg[x]
            for y in real.neighbors(x):
                vy = pg.get(y)
                if vy is None:
                    raise PackError(
                        f"completion left neighbour {y} of {x} unembedded",
                        "completion")
                if y in batch_all and y < x:
                    continue
                if not gb.has_edge(vx, vy) or (gcirc_rows[vx] >> vy) & 1:
                    raise PackError(
                        f"completion edge {x}-{y} not on a fresh slice edge",
                        "completion")
                gcirc_rows[vx] |= 1 << vy
                gcirc_rows[vy] |= 1 << vx
        # exactness: every cluster bijectively covered now
        for i in range(1, r + 1):
            imgs = sorted(pg[x] for x in guest.clusters[i])
            if imgs != sorted(inst.host_clusters[i]):
                raise PackError(f"cluster {i} not exactly covered after "
                                f"completion of guest {g}", "completion")
        return {"guest": g, "status": "ok", "holes": total_holes,
                "attempt": attempt, "batch_sizes":
                    {i: len(batch[i]) for i in batch}, "hypotheses": hyp}
    raise PackError(
        f"completion failed for guest {g}: {last_err}", "completion",
        {"holes": total_holes})


def _draw_batch(inst, real: Graph, guest: Guest, pg: dict, holes: dict,
                mu: float, cfg: PipelineConfig, rng, gcirc_rows) -> dict:
    """Holes with their depth-2 guest neighbourhoods, plus whole random
    segments up to a mu-fraction per cluster.

    Whole segments keep every batch vertex's outside-anchor count at most
    one, which is what makes the candidate rows usable in the thin slice.
    Vertices whose images sit on completion-heavy host vertices are avoided
    as segment seeds."""
    r = inst.r
    owner = guest.cluster_of()
    batch: dict[int, set[int]] = {i: set(holes[i]) for i in range(1, r + 1)}

    def in_batch(x) -> bool:
        i = owner.get(x, 0)
        return i != 0 and x in batch[i]

    def add(x) -> None:
        i = owner.get(x, 0)
        if i != 0:
            batch[i].add(x)

    frontier = [x for i in range(1, r + 1) for x in holes[i]]
    for _depth in range(2):
        nxt = []
        for x in frontier:
            for y in real.neighbors(x):
                if owner.get(y, 0) != 0 and not in_batch(y):
                    add(y)
                    nxt.append(y)
        frontier = nxt

    n_i = {i: len(guest.clusters[i]) for i in range(1, r + 1)}
    target = {i: max(len(batch[i]), int(mu * n_i[i])) for i in batch}
    hard_cap = {i: max(target[i], int(0.6 * n_i[i])) for i in batch}

    high = set()
    for i in range(1, r + 1):
        loads = sorted(((gcirc_rows[v].bit_count(), v)
                        for v in inst.host_clusters[i]), reverse=True)
        take = max(1, int(len(loads) * (cfg.mu ** 1.5)))
        high.update(v for _ld, v in loads[:take] if _ld > 0)

    pool = [x for i in range(1, r + 1) for x in guest.clusters[i]
            if not in_batch(x)]
    rng.shuffle(pool)
    for x in pool:
        if all(len(batch[i]) >= target[i] for i in batch):
            break
        if in_batch(x):
            continue
        if x in pg and pg[x] in high:
            continue
        if any(len(batch[i]) >= hard_cap[i] for i in batch):
            break
        # a whole segment: walked vertices all enter the batch so interior
        # vertices carry no outside anchors
        seg = [x]
        cur = x
        for _ in range(cfg.segment_len - 1):
            nxt = [y for y in real.neighbors(cur)
                   if owner.get(y, 0) != 0 and not in_batch(y)
                   and y not in seg]
            if not nxt:
                break
            cur = nxt[rng.randrange(len(nxt))]
            seg.append(cur)
        for y in seg:
            add(y)
    return {i: sorted(batch[i]) for i in batch}


def _build_completion_task(inst, real: Graph, guest: Guest, pg: dict,
                           batch: dict, gb: Graph, gcirc_rows, host_n: int,
                           cfg: PipelineConfig):
    r = inst.r
    owner = guest.cluster_of()
    batch_all = {x for i in batch for x in batch[i]}
    clusters = []
    slots = []
    idx_of_cluster = {}
    for i in range(1, r + 1):
        if not batch[i]:
            continue
        idx_of_cluster[i] = len(clusters)
        clusters.append(list(batch[i]))
        free = [v for v in inst.host_clusters[i]
                if v not in {pg[x] for x in guest.clusters[i]
                             if x in pg and x not in batch_all}]
        slots.append(free)
    if not clusters:
        return None, None, {}
    for ci, (cl, sl) in enumerate(zip(clusters, slots)):
        if len(cl) != len(sl):
            raise PackError(
                f"batch/slot size mismatch in cluster index {ci}",
                "completion")

    # candidate rows: anchored by embedded outside-batch neighbours via the
    # fresh part of the completion slice
    candidates = {}
    hyp = {"rows_min": None, "w_sizes": {}, "g_circ_max": 0, "starved": []}
    min_row = max(2, int(cfg.tolerances.get("completion_min_row", 2)))
    for ci, cl in enumerate(clusters):
        sl = slots[ci]
        spos = {v: k for k, v in enumerate(sl)}
        full = (1 << len(sl)) - 1
        for k, x in enumerate(cl):
            m = full
            anchored = False
            for y in real.neighbors(x):
                if y in batch_all:
                    continue
                vy = pg.get(y)
                if vy is None:
                    continue
                anchored = True
                nm = gb.neighbors_mask(vy) & ~gcirc_rows[vy]
                mm = 0
                for v, kk in spos.items():
                    if (nm >> v) & 1:
                        mm |= 1 << kk
                m &= mm
            candidates[(ci, k)] = m
            cnt = m.bit_count()
            if anchored and cnt < min_row:
                hyp["starved"].append(x)
            if hyp["rows_min"] is None or cnt < hyp["rows_min"]:
                hyp["rows_min"] = cnt
        hyp["w_sizes"][ci] = len(sl)

    # pairwise slot adjacency through the fresh slice
    adjacency = {}
    batch_graph_edges = []
    for x in batch_all:
        for y in real.neighbors(x):
            if y in batch_all and x < y:
                i, j = owner[x], owner[y]
                if i == j:
                    raise PackError("batch edge inside one cluster",
                                    "completion")
                batch_graph_edges.append((x, y))
    pairs_needed = {(idx_of_cluster[owner[x]], idx_of_cluster[owner[y]])
                    for x, y in batch_graph_edges}
    pairs_needed |= {(b, a) for a, b in pairs_needed}
    for (ci, cj) in pairs_needed:
        rows = []
        for v in slots[ci]:
            nm = gb.neighbors_mask(v) & ~gcirc_rows[v]
            m = 0
            for kk, w in enumerate(slots[cj]):
                if (nm >> w) & 1:
                    m |= 1 << kk
            rows.append(m)
        adjacency[(ci, cj)] = rows

    # a batch edge between two pinned vertices can be jointly unplaceable
    # even when each row looks fine; dissolve both ends when the number of
    # compatible slot pairs is small
    pair_min = max(4, int(cfg.tolerances.get("completion_pair_min", 6)))
    kpos = {}
    for ci, cl in enumerate(clusters):
        for k, x in enumerate(cl):
            kpos[x] = (ci, k)
    for x, y in batch_graph_edges:
        ci, ki = kpos[x]
        cj, kj = kpos[y]
        row_x = candidates[(ci, ki)]
        row_y = candidates[(cj, kj)]
        adj = adjacency[(ci, cj)]
        compat = 0
        m = row_x
        while m and compat < pair_min:
            sbit = (m & -m).bit_length() - 1
            m &= m - 1
            compat += (adj[sbit] & row_y).bit_count()
        if compat < pair_min:
            hyp["starved"].extend([x, y])
    for v_list in slots:
        for v in v_list:
            hyp["g_circ_max"] = max(hyp["g_circ_max"],
                                    gcirc_rows[v].bit_count())

    # relabel batch graph onto the embedding task's vertex universe
    vid = {}
    for cl in clusters:
        for x in cl:
            vid[x] = len(vid)
    gedges = [(vid[x], vid[y]) for x, y in batch_graph_edges]
    gtask = Graph.from_edges(len(vid), gedges)
    task = EmbeddingTask(gtask,
                         [[vid[x] for x in cl] for cl in clusters],
                         slots,
                         {k: v for k, v in candidates.items()},
                         adjacency)
    back = {vid[x]: x for cl in clusters for x in cl}
    return task, back, hyp


# ---------------------------------------------------------------------------
# full drivers
# ---------------------------------------------------------------------------


def pack_extended(inst: ExtendedBlowUpInstance,
                  set_testers: Sequence[dict] = (),
                  vertex_testers: Sequence[dict] = (),
                  cfg: Optional[PipelineConfig] = None,
                  ledger_out: Optional[InductionLedger] = None
                  ) -> PackingResult:
    """Pack an extended blow-up instance: refine guests and host, pad the
    refined pairs, run the matching case, strip artificial edges, verify."""
    cfg = cfg or PipelineConfig()
    last: Optional[Exception] = None
    for attempt in range(max(1, cfg.pack_retries + 1)):
        sub = PipelineConfig.from_json({**cfg.to_json(),
                                        "seed": derive_seed(cfg.seed, "pack",
                                                            attempt)})
        try:
            return _pack_extended_once(inst, set_testers, vertex_testers,
                                       sub, cfg.seed, ledger_out)
        except PackError as exc:
            last = exc
    assert last is not None
    raise last


def _pack_extended_once(inst, set_testers, vertex_testers,
                        cfg: PipelineConfig, master_seed: int,
                        ledger_out) -> PackingResult:
    t0 = time.time()
    errs = check_structure(inst)
    if errs:
        raise PackError("; ".join(errs), "structure")
    r = inst.r
    b = cfg.beta_inv
    nguests = len(inst.guests)
    n_orig = max((len(c) for c in inst.host_clusters[1:]), default=0)

    # 1. guest refinement (exceptional cluster excluded), carrying the
    # vertex-tester weights and the set-tester indicator weights
    weights = []
    for t in vertex_testers:
        per_guest = [dict() for _ in range(nguests)]
        for (g, x), w in t["weights"].items():
            per_guest[g][x] = w
        weights.append(per_guest)
    for t in set_testers:
        per_guest = [dict() for _ in range(nguests)]
        for g, ys in t["Ys"]:
            for x in ys:
                per_guest[g][x] = 1.0
        weights.append(per_guest)

    guest_inputs = [(g.graph, [list(g.clusters[i]) for i in range(1, r + 1)])
                    for g in inst.guests]
    refinement, split_report = refine_collection(
        guest_inputs, SplitConfig(b, derive_seed(cfg.seed, "split"),
                                  max_retries=cfg.split_retries * 12),
        weights)

    # global ids for refined clusters: (i, j) -> (i-1)*b + j + 1
    def gid(i: int, j: int) -> int:
        return (i - 1) * b + j + 1

    big_r = r * b
    sizes_profile = {i: [len(refinement.parts[0][i - 1][j]) for j in range(b)]
                     for i in range(1, r + 1)}

    # 2. host refinement with matching size profile
    host_parts = _refine_host(inst, cfg, sizes_profile, set_testers)

    # 3. refined reduced graph
    rp_edges = set()
    for i, ip in inst.reduced_edges:
        for j in range(b):
            for jp in range(b):
                rp_edges.add(tuple(sorted((gid(i, j), gid(ip, jp)))))

    # 4. refined guests with padding to usable matchings
    pad_target = cfg.pad_target
    if pad_target is None:
        pad_target = max(2, int(round(n_orig * (1.0 / b) ** 4)))
    rng_pad = derive_rng(cfg.seed, "pad")
    new_guests = []
    for g, guest in enumerate(inst.guests):
        clusters = [tuple(guest.clusters[0])]
        for i in range(1, r + 1):
            for j in range(b):
                clusters.append(tuple(sorted(refinement.parts[g][i - 1][j])))
        owner = {}
        for ci, cl in enumerate(clusters):
            for x in cl:
                owner[x] = ci
        extra = []
        gmask = guest.graph
        for a_id, b_id in sorted(rp_edges):
            ca, cb = clusters[a_id], clusters[b_id]
            have = 0
            matched = set()
            for x in ca:
                for y in gmask.neighbors(x):
                    if owner.get(y) == b_id:
                        have += 1
                        matched.add(x)
                        matched.add(y)
            need = pad_target - have
            if need <= 0:
                continue
            free_a = [x for x in ca if x not in matched]
            free_b = [y for y in cb if y not in matched]
            rng_pad.shuffle(free_a)
            rng_pad.shuffle(free_b)
            for x, y in list(zip(free_a, free_b))[:need]:
                extra.append((x, y))
        new_guests.append(guest.with_edges_added(extra, artificial=True))

    refined = ExtendedBlowUpInstance(
        tuple(new_guests), inst.host, big_r,
        frozenset(rp_edges),
        tuple([tuple(inst.host_clusters[0])] + host_parts),
        inst.phi0)
    errs = check_structure(refined)
    if errs:
        raise PackError("; ".join(errs), "refined-structure")

    # 5. lift testers onto refined clusters
    part_of_host = {}
    for ci, cl in enumerate(refined.host_clusters):
        for v in cl:
            part_of_host[v] = ci
    part_of_guest = [dict() for _ in range(nguests)]
    for g in range(nguests):
        for ci, cl in enumerate(refined.guests[g].clusters):
            for x in cl:
                part_of_guest[g][x] = ci
    lifted_set = []
    for t in set_testers:
        for cid in range(1, big_r + 1):
            if part_of_host.get(t["W"][0]) is None:
                continue
            w = [v for v in t["W"] if part_of_host[v] == cid]
            ys = []
            for g, yvs in t["Ys"]:
                ys.append([g, [x for x in yvs
                               if part_of_guest[g].get(x) == cid]])
            if w and all(y[1] for y in ys):
                lifted_set.append({"cluster": cid, "W": w, "Ys": ys,
                                   "name": t.get("name", "set")})
    lifted_vertex = []
    for t in vertex_testers:
        cid = part_of_host.get(t["v"])
        if not cid:
            continue
        wts = {(g, x): w for (g, x), w in t["weights"].items()
               if part_of_guest[g].get(x) == cid}
        lifted_vertex.append({"v": t["v"], "cluster": cid, "weights": wts,
                              "name": t.get("name", "vt")})

    timings = {"refine": time.time() - t0}
    result = pack_matching_case(refined, lifted_set, lifted_vertex, cfg,
                                ledger_out)
    result.timings.update(timings)

    # 7. strip artificial edges (the map itself is unchanged) and verify
    # against the original instance
    verify = verify_result(result, inst, set_testers, vertex_testers,
                           cfg.alpha)
    result.report["verification"] = verify
    result.report["split"] = {"passed": split_report["passed"]}
    result.valid = verify["valid"]
    result.report["master_seed"] = master_seed
    if not result.valid:
        raise PackError("verification failed after packing", "verify",
                        {"verification": verify})
    return result


def _refine_host(inst: ExtendedBlowUpInstance, cfg: PipelineConfig,
                 sizes_profile: dict, set_testers: Sequence[dict]
                 ) -> list[tuple[int, ...]]:
    from .regularity import SizeError, super_regularity_verdict

    b = cfg.beta_inv
    d = _estimate_density(inst)
    n_orig = max((len(c) for c in inst.host_clusters[1:]), default=0)
    n_part = max(1, n_orig // b)
    eps = cfg.tol("host_refine_eps",
                  max(cfg.eps0 * 2.5, noise_eps(d, n_part)))
    for attempt in range(cfg.host_refine_retries):
        rng = derive_rng(cfg.seed, "host-refine", attempt)
        parts: list[tuple[int, ...]] = []
        for i in range(1, inst.r + 1):
            ids = list(inst.host_clusters[i])
            rng.shuffle(ids)
            out = []
            at = 0
            for j in range(b):
                size = sizes_profile[i][j]
                out.append(tuple(sorted(ids[at:at + size])))
                at += size
            if at != len(ids):
                raise PackError("host refinement profile mismatch",
                                "host-refine")
            parts.extend(out)
        ok = True
        for i, ip in inst.reduced_edges:
            for j in range(b):
                for jp in range(b):
                    pa = parts[(i - 1) * b + j]
                    pb = parts[(ip - 1) * b + jp]
                    try:
                        v = super_regularity_verdict(
                            _slice_pair(inst.host, pa, pb), eps, d,
                            mode="codegree")
                        if not v.accepted:
                            ok = False
                    except SizeError:
                        pass
                if not ok:
                    break
            if not ok:
                break
        if not ok:
            continue
        # tester-mass balance (recorded; binomial noise at desk scale)
        balanced = True
        for t in set_testers:
            w = t["W"]
            for part in parts:
                inter = len(set(w) & set(part))
                if abs(inter - len(w) / b) > (1.0 / b) ** 1.5 * n_orig \
                        + 3 * (len(w) ** 0.5) + 1e-9:
                    balanced = False
        if balanced or attempt >= cfg.host_refine_retries - 2:
            return parts
    raise PackError("host refinement failed verification", "host-refine")


def pack_quasirandom(host: Graph, guests: Sequence[Graph],
                     set_testers: Sequence[dict] = (),
                     vertex_testers: Sequence[dict] = (),
                     cfg: Optional[PipelineConfig] = None
                     ) -> PackingResult:
    """Quasirandom front-end: random equipartition, trivial-partition
    refinement, and the matching case on the resulting blow-up structure.

    set_testers here carry global W and per-guest Ys; vertex testers carry
    a host vertex and per-guest-vertex weights.
    """
    from .regularity import quasirandomness_verdict

    cfg = cfg or PipelineConfig()
    n = host.n
    d = 2 * host.edge_count() / (n * (n - 1)) if n > 1 else 0.0
    qv = quasirandomness_verdict(host, cfg.tol("quasi_eps", 0.2), d)
    if not qv.accepted:
        raise PackError("host failed the quasirandomness window",
                        "quasirandom", {"witness": qv.witness})
    alpha_inv = 1.0 / cfg.alpha
    total_e = sum(g.edge_count() for g in guests)
    if total_e > (1 - cfg.alpha) * host.edge_count() + 1e-9:
        raise PackError("guest edge budget exceeds (1-alpha) e(G)",
                        "quasirandom")
    for gi, g in enumerate(guests):
        if g.max_degree() > alpha_inv + 1e-9:
            raise PackError(f"guest {gi} exceeds the degree bound",
                            "quasirandom")

    b = cfg.quasi_beta_inv
    padded = []
    for g in guests:
        if g.n > n:
            raise PackError("guest larger than host", "quasirandom")
        if g.n < n:
            rows = list(g.rows) + [0] * (n - g.n)
            padded.append(Graph(n, tuple(rows)))
        else:
            padded.append(g)

    weights = []
    for t in vertex_testers:
        per_guest = [dict() for _ in range(len(padded))]
        for (g, x), w in t["weights"].items():
            per_guest[g][x] = w
        weights.append(per_guest)
    for t in set_testers:
        per_guest = [dict() for _ in range(len(padded))]
        for g, ys in t["Ys"]:
            for x in ys:
                per_guest[g][x] = 1.0
        weights.append(per_guest)

    refinement, _rep = refine_collection(
        [(g, [list(range(n))]) for g in padded],
        SplitConfig(b, derive_seed(cfg.seed, "qsplit"),
                    max_retries=cfg.split_retries * 12),
        weights)
    profile = [len(refinement.parts[0][0][j]) for j in range(b)]

    rng = derive_rng(cfg.seed, "qpart")
    ids = list(range(n))
    rng.shuffle(ids)
    parts = []
    at = 0
    for j in range(b):
        parts.append(tuple(sorted(ids[at:at + profile[j]])))
        at += profile[j]

    guests_ref = []
    for g, graph in enumerate(padded):
        clusters = [()] + [tuple(sorted(refinement.parts[g][0][j]))
                           for j in range(b)]
        guests_ref.append(Guest(graph, tuple(clusters)))
    redges = frozenset((i, j) for i in range(1, b + 1)
                       for j in range(i + 1, b + 1))
    inst = ExtendedBlowUpInstance(
        tuple(guests_ref), host, b, redges,
        tuple([()] + parts), tuple({} for _ in guests_ref))

    # pad refined pairs exactly as the multipartite driver does
    sub = PipelineConfig.from_json({**cfg.to_json(), "beta_inv": 1})
    part_of_host = {}
    for ci, cl in enumerate(inst.host_clusters):
        for v in cl:
            part_of_host[v] = ci
    part_of_guest = [dict() for _ in guests_ref]
    for g, gu in enumerate(guests_ref):
        for ci, cl in enumerate(gu.clusters):
            for x in cl:
                part_of_guest[g][x] = ci
    lifted_set = []
    for t in set_testers:
        for cid in range(1, b + 1):
            w = [v for v in t["W"] if part_of_host[v] == cid]
            ys = [[g, [x for x in yvs if part_of_guest[g].get(x) == cid]]
                  for g, yvs in t["Ys"]]
            if w and all(y[1] for y in ys):
                lifted_set.append({"cluster": cid, "W": w, "Ys": ys,
                                   "name": t.get("name", "set")})
    lifted_vertex = []
    for t in vertex_testers:
        cid = part_of_host.get(t["v"])
        if not cid:
            continue
        wts = {(g, x): w for (g, x), w in t["weights"].items()
               if part_of_guest[g].get(x) == cid}
        lifted_vertex.append({"v": t["v"], "cluster": cid, "weights": wts,
                              "name": t.get("name", "vt")})

    inst_padded = _pad_refined(inst, sub, derive_rng(cfg.seed, "qpad"))
    result = pack_matching_case(inst_padded, lifted_set, lifted_vertex, cfg)

    pseudo = ExtendedBlowUpInstance(
        tuple(Guest(g, (tuple(),) + (tuple(range(n)),))
              for g in padded), host, 1, frozenset(),
        ((), tuple(range(n))), tuple({} for _ in padded))
    verify = verify_result(result, pseudo,
                           [{**t, "cluster": 1} for t in set_testers],
                           [{**t, "cluster": 1} for t in vertex_testers],
                           cfg.alpha, skip_cluster_exactness=False)
    result.report["verification"] = verify
    result.valid = verify["valid"]
    if not result.valid:
        raise PackError("quasirandom verification failed", "verify",
                        {"verification": verify})
    return result


def _pad_refined(inst: ExtendedBlowUpInstance, cfg: PipelineConfig,
                 rng) -> ExtendedBlowUpInstance:
    n_orig = max(len(c) for c in inst.host_clusters[1:])
    pad_target = cfg.pad_target or max(2, int(round(
        n_orig * (1.0 / max(2, inst.r)) ** 2)))
    new_guests = []
    for g, guest in enumerate(inst.guests):
        owner = guest.cluster_of()
        extra = []
        for a_id, b_id in sorted(inst.reduced_edges):
            ca, cb = guest.clusters[a_id], guest.clusters[b_id]
            have = 0
            matched = set()
            for x in ca:
                for y in guest.graph.neighbors(x):
                    if owner.get(y) == b_id:
                        have += 1
                        matched.add(x)
                        matched.add(y)
            need = pad_target - have
            if need <= 0:
                continue
            free_a = [x for x in ca if x not in matched]
            free_b = [y for y in cb if y not in matched]
            rng.shuffle(free_a)
            rng.shuffle(free_b)
            extra.extend(list(zip(free_a, free_b))[:need])
        new_guests.append(guest.with_edges_added(extra, artificial=True))
    return ExtendedBlowUpInstance(tuple(new_guests), inst.host, inst.r,
                                  inst.reduced_edges, inst.host_clusters,
                                  inst.phi0)


def verify_result(result: PackingResult, inst: ExtendedBlowUpInstance,
                  set_testers: Sequence[dict] = (),
                  vertex_testers: Sequence[dict] = (),
                  alpha: float = 0.25,
                  skip_cluster_exactness: bool = False) -> dict:
    """Recompute everything from scratch: per-guest injectivity, guest-edge
    preservation, pairwise edge-disjointness of guest images, exact cluster
    coverage, and every tester value with its deviation."""
    report: dict = {"checks": {}}
    ok = True

    inj = True
    for g, guest in enumerate(inst.guests):
        m = result.phi[g]
        if set(m.keys()) != set(range(guest.graph.n)):
            inj = False
            report["checks"].setdefault("domain", []).append(g)
        if len(set(m.values())) != len(m):
            inj = False
            report["checks"].setdefault("injectivity", []).append(g)
    report["injectivity"] = inj
    ok &= inj

    preserve = True
    first_bad = None
    used: dict[tuple[int, int], tuple] = {}
    disjoint = True
    for g, guest in enumerate(inst.guests):
        m = result.phi[g]
        real = guest.real_graph()
        for u, v in real.edges():
            iu, iv = m.get(u), m.get(v)
            if iu is None or iv is None or not inst.host.has_edge(iu, iv):
                preserve = False
                if first_bad is None:
                    first_bad = {"guest": g, "edge": [u, v],
                                 "image": [iu, iv]}
                continue
            key = (min(iu, iv), max(iu, iv))
            if key in used:
                disjoint = False
                if first_bad is None:
                    first_bad = {"reused_host_edge": list(key),
                                 "guests": [used[key][0], g]}
            else:
                used[key] = (g, u, v)
    report["edge_preservation"] = preserve
    report["edge_disjointness"] = disjoint
    if first_bad:
        report["first_violation"] = first_bad
    ok &= preserve and disjoint

    exact = True
    if not skip_cluster_exactness:
        for g, guest in enumerate(inst.guests):
            m = result.phi[g]
            for i in range(inst.r + 1):
                want = sorted(inst.host_clusters[i])
                got = sorted(m[x] for x in guest.clusters[i] if x in m)
                if len(guest.clusters[i]) != len(want) or got != want:
                    exact = False
                    report["checks"].setdefault("cluster_exactness",
                                                []).append([g, i])
    report["cluster_exactness"] = exact
    ok &= exact

    srows = []
    for t in set_testers:
        n_t = len(inst.host_clusters[t["cluster"]])
        wset = set(t["W"])
        inter = None
        prod = len(wset)
        for g, ys in t["Ys"]:
            img = {result.phi[g][x] for x in ys if x in result.phi[g]}
            inter = img if inter is None else inter & img
            prod *= len(ys)
        got = len(wset & inter) if inter is not None else 0
        target = prod / (n_t ** len(t["Ys"])) if n_t else 0.0
        srows.append({"name": t.get("name", "set"), "count": got,
                      "target": target, "deviation": abs(got - target),
                      "within_alpha_n": abs(got - target) <= alpha * n_t + 1e-9})
    report["set_testers"] = srows

    vrows = []
    for t in vertex_testers:
        n_t = len(inst.host_clusters[t["cluster"]])
        v = t["v"]
        got = sum(w for (g, x), w in t["weights"].items()
                  if result.phi[g].get(x) == v)
        total = sum(t["weights"].values())
        target = total / n_t if n_t else 0.0
        vrows.append({"name": t.get("name", "vt"), "mass": got,
                      "target": target, "deviation": abs(got - target),
                      "within_alpha_n": abs(got - target) <= alpha * n_t + 1e-9})
    report["vertex_testers"] = vrows

    report["valid"] = bool(ok)
    return report
