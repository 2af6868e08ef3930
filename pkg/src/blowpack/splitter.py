"""Cluster refinement: split every cluster of every guest into beta^-1
sub-clusters that are independent in H^2, balanced, weight-balanced, and
edge-balanced across the collection.

Existence in the source argument is probabilistic; here each guest cluster
is resampled and repaired until all conditions verify, with an explicit
retry budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .graphs import Graph
from .rng import derive_rng


class RefinementError(RuntimeError):
    pass


class ConfigurationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SplitConfig:
    beta_inv: int
    seed: int = 0
    max_retries: int = 100
    weight_tol: Optional[float] = None   # default beta^{3/2} * n
    edge_tol: Optional[float] = None     # default n^{5/3}

    def __post_init__(self) -> None:
        if self.beta_inv < 2:
            raise ConfigurationError("beta^-1 must be an integer >= 2")

    @property
    def beta(self) -> float:
        return 1.0 / self.beta_inv


@dataclass
class RefinedPartition:
    """parts[guest][cluster][sub] -> list of vertex ids."""

    parts: list[list[list[list[int]]]]

    def to_json(self) -> list:
        return self.parts


def _in_cluster_conflicts(graph: Graph, cluster: Sequence[int]) -> dict[int, set[int]]:
    """H^2-neighbourhoods restricted to the cluster."""
    cset = set(cluster)
    out: dict[int, set[int]] = {}
    for x in cluster:
        m = graph.neighbors_mask(x)
        reach = m
        while m:
            y = (m & -m).bit_length() - 1
            reach |= graph.neighbors_mask(y)
            m &= m - 1
        conf = set()
        mm = reach & ~(1 << x)
        while mm:
            z = (mm & -mm).bit_length() - 1
            if z in cset:
                conf.add(z)
            mm &= mm - 1
        out[x] = conf
    return out


def _split_one_cluster(cluster: Sequence[int], conflicts: dict[int, set[int]],
                       b: int, rng) -> Optional[list[set[int]]]:
    """One seeded attempt at an H^2-independent balanced b-split."""
    verts = list(cluster)
    rem = len(verts) % b
    rng.shuffle(verts)
    leftover = verts[:rem]
    core = verts[rem:]
    size = len(core) // b
    classes = [set(core[j * size:(j + 1) * size]) for j in range(b)]
    where = {}
    for j, cl in enumerate(classes):
        for x in cl:
            where[x] = j

    def conflicted_in(x: int, j: int, excluding: Optional[int] = None) -> bool:
        cl = classes[j]
        for y in conflicts[x]:
            if y in cl and y != excluding and y != x:
                return True
        return False

    # swap repair: exchange a conflicted vertex with a safe partner elsewhere
    budget = 4 * len(core) + 16
    for _pass in range(len(core) + 2):
        bad = [x for x in core if conflicted_in(x, where[x])]
        if not bad:
            break
        rng.shuffle(bad)
        progress = False
        for x in bad:
            j = where[x]
            if not conflicted_in(x, j):
                continue
            targets = list(range(b))
            rng.shuffle(targets)
            done = False
            for j2 in targets:
                if j2 == j or conflicted_in(x, j2):
                    continue
                partners = list(classes[j2])
                rng.shuffle(partners)
                for w in partners:
                    if conflicted_in(w, j, excluding=x) or w in conflicts[x]:
                        continue
                    classes[j].discard(x)
                    classes[j2].discard(w)
                    classes[j].add(w)
                    classes[j2].add(x)
                    where[x], where[w] = j2, j
                    done = True
                    break
                if done:
                    break
            if done:
                progress = True
            budget -= 1
            if budget <= 0:
                return None
        if not progress:
            return None
    else:
        return None
    if any(conflicted_in(x, where[x]) for x in core):
        return None

    # reinsert leftover vertices, keeping classes within one of each other
    for x in leftover:
        order = sorted(range(b), key=lambda j: (len(classes[j]), rng.random()))
        placed = False
        for j in order:
            if len(classes[j]) > len(classes[order[0]]):
                break
            if not conflicted_in(x, j):
                classes[j].add(x)
                placed = True
                break
        if not placed:
            # single-depth eviction repair; the evictee may only land in a
            # currently-minimal class so sizes stay within one of each other
            min_size = len(classes[order[0]])
            for j in order:
                if len(classes[j]) > min_size:
                    break
                for w in list(classes[j]):
                    if w in conflicts[x] or conflicted_in(x, j, excluding=w):
                        continue
                    for j2 in range(b):
                        if (j2 != j and len(classes[j2]) == min_size
                                and not conflicted_in(w, j2)):
                            classes[j].discard(w)
                            classes[j2].add(w)
                            classes[j].add(x)
                            placed = True
                            break
                    if placed:
                        break
                if placed:
                    break
        if not placed:
            return None
    return classes


def refine_collection(guests: Sequence[tuple[Graph, Sequence[Sequence[int]]]],
                      cfg: SplitConfig,
                      weights: Sequence[Sequence[float]] = ()
                      ) -> tuple[RefinedPartition, dict]:
    """Refine every cluster of every guest into beta^-1 sub-clusters.

    `guests[g]` is (graph, clusters); `weights[w][g]` is a per-guest map
    from vertex id to weight (sequence or dict), bounded.

    Returns the refinement and a verification report.  Raises
    RefinementError / ConfigurationError when the retry budget runs out.
    """
    b = cfg.beta_inv
    beta = cfg.beta
    if not guests:
        return RefinedPartition([]), {"passed": True, "note": "empty"}
    ncl = len(guests[0][1])
    sizes0 = [len(c) for c in guests[0][1]]
    for g, (_, clusters) in enumerate(guests):
        if len(clusters) != ncl:
            raise ConfigurationError("guests must have equally many clusters")
        if [len(c) for c in clusters] != sizes0:
            raise ConfigurationError(
                "cluster sizes must be equal across guests per index")
    n_ref = max(sizes0) if sizes0 else 0
    wtol = cfg.weight_tol if cfg.weight_tol is not None else beta ** 1.5 * n_ref
    etol = cfg.edge_tol if cfg.edge_tol is not None else n_ref ** (5.0 / 3.0)

    parts: list[list[list[list[int]]]] = []
    max_conf_deg = 0
    for g, (graph, clusters) in enumerate(guests):
        gparts: list[list[list[int]]] = []
        for i, cluster in enumerate(clusters):
            conflicts = _in_cluster_conflicts(graph, cluster)
            if conflicts:
                max_conf_deg = max(max_conf_deg,
                                   max(len(s) for s in conflicts.values()))
            classes = None
            for attempt in range(cfg.max_retries):
                rng = derive_rng(cfg.seed, "split", g, i, attempt)
                classes = _split_one_cluster(cluster, conflicts, b, rng)
                if classes is None:
                    continue
                if _weights_ok(classes, cluster, weights, g, beta, wtol):
                    break
                classes = None
            if classes is None:
                if max_conf_deg >= b:
                    raise ConfigurationError(
                        f"in-cluster H^2 degree {max_conf_deg} >= beta^-1={b}; "
                        f"swap procedure has no admissible targets "
                        f"(guest {g}, cluster {i})")
                raise RefinementError(
                    f"retry budget exhausted on guest {g} cluster {i} "
                    f"(independence or weight balance)")
            ordered = sorted(classes, key=len)
            gparts.append([sorted(c) for c in ordered])
        parts.append(gparts)

    # collection-level edge balance via per-(guest,cluster) permutations of
    # equal-size classes
    perm_ok = False
    report_iv: dict = {}
    for attempt in range(cfg.max_retries):
        for g in range(len(guests)):
            for i in range(ncl):
                rng = derive_rng(cfg.seed, "perm", g, i, attempt)
                _permute_same_size(parts[g][i], rng)
        refinement = RefinedPartition(parts)
        report_iv = _edge_balance_report(guests, refinement, beta, etol)
        if report_iv["passed"]:
            perm_ok = True
            break
    if not perm_ok:
        raise RefinementError(
            f"retry budget exhausted on edge balance: {report_iv}")

    refinement = RefinedPartition(parts)
    report = check_refinement(guests, refinement, cfg, weights)
    if not report["passed"]:
        raise RefinementError(f"post-hoc verification failed: {report}")
    return refinement, report


def _weights_ok(classes, cluster, weights, g, beta, wtol) -> bool:
    for w in weights:
        wg = w[g]
        total = sum(_wval(wg, x) for x in cluster)
        for cl in classes:
            part = sum(_wval(wg, x) for x in cl)
            if abs(part - beta * total) > wtol + 1e-9:
                return False
    return True


def _wval(wg, x: int) -> float:
    if isinstance(wg, dict):
        return float(wg.get(x, 0.0))
    return float(wg[x])


def _permute_same_size(subs: list[list[int]], rng) -> None:
    """Shuffle sub-cluster order within equal-size groups (keeps sizes sorted)."""
    by_size: dict[int, list[int]] = {}
    for idx, sub in enumerate(subs):
        by_size.setdefault(len(sub), []).append(idx)
    new = list(subs)
    for size, idxs in by_size.items():
        perm = idxs[:]
        rng.shuffle(perm)
        for a, b in zip(idxs, perm):
            new[a] = subs[b]
    subs[:] = new


def _edge_balance_report(guests, refinement: RefinedPartition, beta: float,
                         etol: float) -> dict:
    ncl = len(guests[0][1])
    b = len(refinement.parts[0][0]) if refinement.parts else 0
    worst = None
    for i in range(ncl):
        for ip in range(i, ncl):
            base = 0
            for g, (graph, clusters) in enumerate(guests):
                base += _edges_between_sets(graph, clusters[i], clusters[ip],
                                            same=(i == ip))
            for j in range(b):
                for jp in range(b):
                    if i == ip and jp <= j:
                        continue
                    tot = 0
                    for g, (graph, _) in enumerate(guests):
                        tot += _edges_between_sets(
                            graph, refinement.parts[g][i][j],
                            refinement.parts[g][ip][jp], same=False)
                    dev = abs(tot - beta * beta * base)
                    if worst is None or dev > worst["deviation"]:
                        worst = {"i": i, "ip": ip, "j": j, "jp": jp,
                                 "total": tot, "target": beta * beta * base,
                                 "deviation": dev}
    passed = worst is None or worst["deviation"] <= etol + 1e-9
    out = {"passed": passed, "tolerance": etol}
    if worst is not None:
        out["worst"] = worst
        out["vacuous"] = etol >= max(1.0, worst["target"])
    return out


def _edges_between_sets(graph: Graph, a: Sequence[int], bset: Sequence[int],
                        same: bool) -> int:
    from .rng import list_to_mask

    am = list_to_mask(a)
    bm = list_to_mask(bset)
    if same:
        return graph.edges_within(am)
    return graph.edges_between(am, bm)


def check_refinement(guests, refinement: RefinedPartition, cfg: SplitConfig,
                     weights: Sequence[Sequence[float]] = ()) -> dict:
    """Exact verifier for the four refinement conditions."""
    b = cfg.beta_inv
    beta = cfg.beta
    ncl = len(guests[0][1]) if guests else 0
    sizes0 = [len(c) for c in guests[0][1]] if guests else []
    n_ref = max(sizes0) if sizes0 else 0
    wtol = cfg.weight_tol if cfg.weight_tol is not None else beta ** 1.5 * n_ref
    etol = cfg.edge_tol if cfg.edge_tol is not None else n_ref ** (5.0 / 3.0)

    independence = {"passed": True}
    balance = {"passed": True}
    cover = {"passed": True}
    weight_balance = {"passed": True}

    for g, (graph, clusters) in enumerate(guests):
        for i, cluster in enumerate(clusters):
            subs = refinement.parts[g][i]
            if len(subs) != b:
                cover = {"passed": False,
                         "witness": {"guest": g, "cluster": i,
                                     "reason": f"{len(subs)} != beta^-1"}}
                continue
            flat = [x for sub in subs for x in sub]
            if sorted(flat) != sorted(cluster):
                cover = {"passed": False,
                         "witness": {"guest": g, "cluster": i,
                                     "reason": "not an exact cover"}}
            sizes = [len(s) for s in subs]
            if sizes != sorted(sizes) or sizes[-1] - sizes[0] > 1:
                balance = {"passed": False,
                           "witness": {"guest": g, "cluster": i,
                                       "sizes": sizes}}
            conflicts = _in_cluster_conflicts(graph, cluster)
            for j, sub in enumerate(subs):
                sset = set(sub)
                for x in sub:
                    hit = conflicts[x] & sset
                    if hit:
                        independence = {
                            "passed": False,
                            "witness": {"guest": g, "cluster": i, "sub": j,
                                        "pair": [x, sorted(hit)[0]]}}
                        break
                if not independence["passed"]:
                    break
            total_w = [sum(_wval(w[g], x) for x in cluster) for w in weights]
            for j, sub in enumerate(subs):
                for wi, w in enumerate(weights):
                    part = sum(_wval(w[g], x) for x in sub)
                    if abs(part - beta * total_w[wi]) > wtol + 1e-9:
                        weight_balance = {
                            "passed": False,
                            "witness": {"guest": g, "cluster": i, "sub": j,
                                        "weight": wi, "value": part,
                                        "target": beta * total_w[wi]}}

    edge_balance = _edge_balance_report(guests, refinement, beta, etol) \
        if guests else {"passed": True}

    # for the constant weight, (iii) must follow from (ii)
    uniform_implication = {"passed": True}
    if balance["passed"]:
        for g, (_, clusters) in enumerate(guests):
            for i, cluster in enumerate(clusters):
                for sub in refinement.parts[g][i]:
                    if abs(len(sub) - beta * len(cluster)) > max(wtol, 1.0) + 1e-9:
                        uniform_implication = {
                            "passed": False,
                            "witness": {"guest": g, "cluster": i,
                                        "size": len(sub)}}

    conditions = {
        "independence": independence,
        "balance": balance,
        "cover": cover,
        "weight_balance": weight_balance,
        "edge_balance": edge_balance,
        "uniform_weight_implication": uniform_implication,
    }
    return {"passed": all(c["passed"] for c in conditions.values()),
            "conditions": conditions,
            "weight_tolerance": wtol, "edge_tolerance": etol}
