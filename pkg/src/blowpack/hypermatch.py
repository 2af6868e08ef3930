"""Uniform hypergraphs and a semi-random matcher.

`find_matching` runs the nibble: in each round every surviving edge is
included independently with probability bite_fraction / (current max
degree), colliding picks are discarded, and covered vertices are deleted.
A randomized-greedy completion pass (scarce vertices first) makes the
matching maximal, and on small inputs a bounded 1-out / 2-in exchange pass
squeezes out easy cardinality wins.

Registered tuple weight functions are tracked passively: the report gives
each weight's achieved mass against omega(E)/Delta^ell, it never steers
the matcher.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional, Sequence

from .jsonio import FORMAT_VERSION
from .rng import derive_rng


class HypergraphError(ValueError):
    pass


class WeightError(ValueError):
    pass


@dataclass(frozen=True)
class Hypergraph:
    n: int
    edges: tuple[frozenset[int], ...]
    k: int

    def __post_init__(self) -> None:
        for e in self.edges:
            if len(e) != self.k:
                raise HypergraphError(
                    f"edge {sorted(e)} has {len(e)} vertices, expected {self.k}")
            for v in e:
                if not (0 <= v < self.n):
                    raise HypergraphError(f"vertex {v} out of range")

    @classmethod
    def from_lists(cls, n: int, edges: Sequence[Sequence[int]]) -> "Hypergraph":
        fs = tuple(frozenset(e) for e in edges)
        if not fs:
            raise HypergraphError("hypergraph needs at least one edge")
        k = len(fs[0])
        return cls(n, fs, k)

    def e(self) -> int:
        return len(self.edges)

    def to_json(self) -> dict:
        return {"format": FORMAT_VERSION, "k": self.k, "vertices": self.n,
                "edges": [sorted(e) for e in self.edges]}

    @classmethod
    def from_json(cls, obj: dict) -> "Hypergraph":
        return cls.from_lists(int(obj["vertices"]), obj["edges"])


def max_degree(h: Hypergraph) -> int:
    deg = [0] * h.n
    for e in h.edges:
        for v in e:
            deg[v] += 1
    return max(deg, default=0)


def max_codegree(h: Hypergraph) -> int:
    pairs: dict[tuple[int, int], int] = {}
    best = 0
    for e in h.edges:
        for a, b in combinations(sorted(e), 2):
            c = pairs.get((a, b), 0) + 1
            pairs[(a, b)] = c
            if c > best:
                best = c
    return best


@dataclass
class TupleWeight:
    """Clean ell-tuple weight on edge indices.

    `support` carries the structured description used for aggregate
    evaluation: for ell=1 a sparse {edge_index: weight} dict; for ell>=2 a
    tuple of ell such dicts interpreted as a product of stars (the weight of
    an ell-set is the permanent-style sum of products picking one edge per
    star).  Evaluation returns 0 on any ell-set that is not a matching, so
    cleanliness holds by construction.
    """

    name: str
    ell: int
    cap: float
    support: object

    def evaluate(self, h: Hypergraph, edge_ids: Sequence[int]) -> float:
        ids = list(edge_ids)
        if len(ids) != self.ell:
            return 0.0
        if len(set(ids)) != self.ell:
            return 0.0
        if not _pairwise_disjoint(h, ids):
            return 0.0
        if self.ell == 1:
            return float(self.support.get(ids[0], 0.0))
        total = 0.0
        from itertools import permutations

        for perm in permutations(ids):
            prod = 1.0
            for d, eid in zip(self.support, perm):
                w = d.get(eid, 0.0)
                if w == 0.0:
                    prod = 0.0
                    break
                prod *= w
            total += prod
        return total

    def total_mass(self, h: Hypergraph) -> float:
        """omega(E(H)): aggregate over the structured support.

        For ell >= 2 the product-of-stars mass is computed without
        enumerating tuples; overlapping-edge corrections are subtracted
        exactly for ell = 2 and the raw product is reported for larger ell
        (matchings never see the difference).
        """
        if self.ell == 1:
            return float(sum(self.support.values()))
        if self.ell == 2:
            d1, d2 = self.support
            s1 = sum(d1.values())
            s2 = sum(d2.values())
            overlap = 0.0
            small, other, flip = (d1, d2, False) if len(d1) <= len(d2) else (d2, d1, True)
            for eid, w in small.items():
                w2 = other.get(eid, 0.0)
                if w2:
                    overlap += w * w2
            total = s1 * s2 - overlap
            # subtract intersecting (non-matching) pairs
            touch = _intersecting_mass(h, d1, d2)
            return max(0.0, total - touch)
        gross = 1.0
        for d in self.support:
            gross *= sum(d.values())
        return gross

    def mass_on(self, h: Hypergraph, matching: Sequence[int]) -> float:
        """omega(M) for a matching, via the structured support."""
        mset = [eid for eid in matching]
        if self.ell == 1:
            return float(sum(self.support.get(e, 0.0) for e in mset))
        total = 0.0
        sup_sets = [
            [e for e in mset if e in d and d[e] != 0.0] for d in self.support
        ]
        for combo in _distinct_tuples(sup_sets):
            prod = 1.0
            for d, eid in zip(self.support, combo):
                prod *= d[eid]
            total += prod
        return total

    def spot_check_clean(self, h: Hypergraph, seed: int = 0,
                         trials: int = 64) -> None:
        """Evaluate on random non-matching ell-sets; raise on nonzero."""
        if self.ell < 2 or h.e() < self.ell:
            return
        rng = derive_rng(seed, "clean", self.name)
        vert_to_edges: dict[int, list[int]] = {}
        for i, e in enumerate(h.edges):
            for v in e:
                vert_to_edges.setdefault(v, []).append(i)
        cands = [ids for ids in vert_to_edges.values() if len(ids) >= 2]
        if not cands:
            return
        for _ in range(trials):
            ids = rng.choice(cands)
            a, b = rng.sample(ids, 2)
            rest = rng.sample(range(h.e()), min(self.ell - 2, h.e()))
            tup = [a, b] + [r for r in rest if r not in (a, b)][: self.ell - 2]
            if len(tup) < self.ell:
                continue
            if self.evaluate(h, tup) != 0.0:
                raise WeightError(
                    f"weight {self.name} nonzero on non-matching set {tup}")


def _distinct_tuples(pools: list[list[int]]):
    if not pools:
        yield ()
        return
    for head in pools[0]:
        for tail in _distinct_tuples(pools[1:]):
            if head not in tail:
                yield (head,) + tail


def _pairwise_disjoint(h: Hypergraph, ids: Sequence[int]) -> bool:
    seen: set[int] = set()
    for eid in ids:
        e = h.edges[eid]
        if seen & e:
            return False
        seen |= e
    return True


def _intersecting_mass(h: Hypergraph, d1: dict, d2: dict) -> float:
    """Sum of d1[e] d2[f] over ordered pairs e != f with e cap f nonempty."""
    vert: dict[int, tuple[float, float]] = {}
    total = 0.0
    # inclusion over vertices overcounts pairs sharing >= 2 vertices; exact
    # enumeration is cheap because supports are stars in practice
    small = d1 if len(d1) <= len(d2) else d2
    big = d2 if small is d1 else d1
    vert_to_big: dict[int, list[int]] = {}
    for eid in big:
        for v in h.edges[eid]:
            vert_to_big.setdefault(v, []).append(eid)
    seen_pairs: set[tuple[int, int]] = set()
    for eid, w in small.items():
        hit: set[int] = set()
        for v in h.edges[eid]:
            hit.update(vert_to_big.get(v, ()))
        for fid in hit:
            if fid == eid:
                continue
            key = (eid, fid)
            if key in seen_pairs:
                continue
            seen_pairs.add(key)
            if small is d1:
                total += w * big[fid]
            else:
                total += big[fid] * w
    return total


@dataclass
class MatchingReport:
    matching: list[int]
    weight_rows: list[dict]
    delta: int
    codegree: int
    rounds_used: int
    seed: int
    restarts_used: int = 1

    def to_json(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "matching": self.matching,
            "weights": self.weight_rows,
            "delta": self.delta,
            "codegree": self.codegree,
            "rounds_used": self.rounds_used,
            "seed": self.seed,
            "restarts_used": self.restarts_used,
        }

    def to_csv_rows(self) -> list[str]:
        out = ["name,ell,mass_total,mass_matching,delta_pow,ratio"]
        for row in self.weight_rows:
            out.append("{name},{ell},{mass_total},{mass_matching},"
                       "{delta_pow},{ratio}".format(**row))
        return out


DEFAULT_BITE = 0.1


def find_matching(h: Hypergraph, weights: Sequence[TupleWeight] = (),
                  params: Optional[dict] = None) -> MatchingReport:
    """Nibble + greedy completion; deterministic per seed.

    params: bite_fraction (default 0.1), rounds (default 10 ceil(log2 Delta)),
    seed (default 0), restarts (default 4), improve_limit (edge count below
    which the exchange pass runs, default 512).
    """
    params = dict(params or {})
    seed = int(params.get("seed", 0))
    bite = float(params.get("bite_fraction", DEFAULT_BITE))
    restarts = max(1, int(params.get("restarts", 4)))
    improve_limit = int(params.get("improve_limit", 512))
    delta = max_degree(h)
    import math

    rounds = params.get("rounds")
    if rounds is None:
        rounds = 10 * max(1, math.ceil(math.log2(max(2, delta))))
    rounds = int(rounds)

    for w in weights:
        w.spot_check_clean(h, seed=seed)

    best: Optional[tuple[int, list[int], int]] = None
    for attempt in range(restarts):
        m, used_rounds = _nibble_once(h, bite, rounds, derive_rng(seed, "nibble", attempt))
        if improve_limit and h.e() <= improve_limit:
            m = _exchange_improve(h, m)
        key = len(m)
        if best is None or key > best[0]:
            best = (key, sorted(m), used_rounds)
    assert best is not None
    matching = best[1]

    _assert_valid_matching(h, matching)

    codeg = max_codegree(h)
    rows = []
    for w in weights:
        total = w.total_mass(h)
        got = w.mass_on(h, matching)
        dpow = float(delta) ** w.ell if delta > 0 else 1.0
        ratio = got * dpow / total if total > 0 else float("nan")
        rows.append({"name": w.name, "ell": w.ell, "mass_total": total,
                     "mass_matching": got, "delta_pow": dpow, "ratio": ratio})
    return MatchingReport(matching, rows, delta, codeg, best[2], seed,
                          restarts)


def _nibble_once(h: Hypergraph, bite: float, rounds: int,
                 rng) -> tuple[list[int], int]:
    alive = [True] * h.e()
    covered = [False] * h.n
    vert_to_edges: list[list[int]] = [[] for _ in range(h.n)]
    for i, e in enumerate(h.edges):
        for v in e:
            vert_to_edges[v].append(i)
    deg = [len(l) for l in vert_to_edges]
    matching: list[int] = []
    used_rounds = 0

    alive_ids = list(range(h.e()))
    for _ in range(rounds):
        if not alive_ids:
            break
        used_rounds += 1
        delta_cur = max(deg) if deg else 0
        if delta_cur <= 1:
            break
        p = min(1.0, bite / delta_cur)
        picked = [eid for eid in alive_ids if rng.random() < p]
        if not picked:
            continue
        hits: dict[int, int] = {}
        for eid in picked:
            for v in h.edges[eid]:
                hits[v] = hits.get(v, 0) + 1
        accepted = [eid for eid in picked
                    if all(hits[v] == 1 for v in h.edges[eid])]
        if not accepted:
            continue
        for eid in accepted:
            matching.append(eid)
            for v in h.edges[eid]:
                covered[v] = True
        new_alive = []
        for eid in alive_ids:
            if alive[eid] and not any(covered[v] for v in h.edges[eid]):
                new_alive.append(eid)
            else:
                if alive[eid]:
                    alive[eid] = False
                    for v in h.edges[eid]:
                        deg[v] -= 1
        if len(new_alive) >= len(alive_ids):
            # no vertex was deleted this round; stop instead of spinning
            alive_ids = new_alive
            break
        alive_ids = new_alive

    # randomized-greedy completion, scarcest vertices first
    order = sorted(
        (v for v in range(h.n) if not covered[v] and vert_to_edges[v]),
        key=lambda v: (sum(1 for eid in vert_to_edges[v]
                           if alive[eid]), rng.random()))
    for v in order:
        if covered[v]:
            continue
        options = [eid for eid in vert_to_edges[v]
                   if alive[eid] and not any(covered[u] for u in h.edges[eid])]
        if not options:
            continue
        eid = options[rng.randrange(len(options))]
        matching.append(eid)
        for u in h.edges[eid]:
            covered[u] = True
    # final sweep guarantees maximality
    for eid in range(h.e()):
        if not any(covered[v] for v in h.edges[eid]):
            matching.append(eid)
            for v in h.edges[eid]:
                covered[v] = True
    return matching, used_rounds


def _exchange_improve(h: Hypergraph, matching: list[int]) -> list[int]:
    """Bounded 1-out / 2-in cardinality improvement to a local optimum."""
    mset = set(matching)
    improved = True
    guard = 4 * (len(matching) + 4)
    while improved and guard > 0:
        improved = False
        guard -= 1
        covered: dict[int, int] = {}
        for eid in mset:
            for v in h.edges[eid]:
                covered[v] = eid
        free = [i for i in range(h.e()) if i not in mset]
        # direct additions first
        for eid in free:
            if not any(v in covered for v in h.edges[eid]):
                mset.add(eid)
                for v in h.edges[eid]:
                    covered[v] = eid
                improved = True
        if improved:
            continue
        for out in list(mset):
            blockers: dict[int, list[int]] = {}
            for eid in free:
                owners = {covered.get(v) for v in h.edges[eid]} - {None}
                if owners == {out}:
                    blockers.setdefault(out, []).append(eid)
            cands = blockers.get(out, [])
            found = False
            for a_i in range(len(cands)):
                for b_i in range(a_i + 1, len(cands)):
                    a, b = cands[a_i], cands[b_i]
                    if not (h.edges[a] & h.edges[b]):
                        mset.discard(out)
                        mset.add(a)
                        mset.add(b)
                        found = True
                        break
                if found:
                    break
            if found:
                improved = True
                break
    return sorted(mset)


def _assert_valid_matching(h: Hypergraph, matching: Sequence[int]) -> None:
    seen: set[int] = set()
    for eid in matching:
        e = h.edges[eid]
        if seen & e:
            raise AssertionError("matcher produced intersecting edges")
        seen |= e
    for eid in range(h.e()):
        if not (h.edges[eid] & seen):
            raise AssertionError("matcher produced a non-maximal matching")


def brute_force_best_matching(h: Hypergraph,
                              weight: Optional[TupleWeight] = None
                              ) -> list[int]:
    """Exhaustive best matching (by weight, ties by cardinality).

    Branches on a lowest-degree uncovered vertex; permitted for e(h) <= 22.
    With no weight, maximizes cardinality.
    """
    if h.e() > 22:
        raise HypergraphError("brute force limited to 22 edges")

    vert_to_edges: dict[int, list[int]] = {}
    for i, e in enumerate(h.edges):
        for v in e:
            vert_to_edges.setdefault(v, []).append(i)

    best: dict = {"key": None, "m": []}

    def score(m: list[int]) -> tuple:
        if weight is None:
            return (len(m),)
        if weight.ell == 1:
            wsum = sum(weight.support.get(e, 0.0) for e in m)
        else:
            wsum = weight.mass_on(h, m)
        return (wsum, len(m))

    def rec(avail: set[int], m: list[int]) -> None:
        key = score(m)
        if best["key"] is None or key > best["key"]:
            best["key"] = key
            best["m"] = sorted(m)
        if not avail:
            return
        # upper bound prune on cardinality when unweighted
        if weight is None and len(m) + len(avail) <= best["key"][0]:
            return
        pivot_v = None
        pivot_deg = None
        alive_per_v: dict[int, list[int]] = {}
        for eid in avail:
            for v in h.edges[eid]:
                alive_per_v.setdefault(v, []).append(eid)
        for v, ids in alive_per_v.items():
            if pivot_deg is None or len(ids) < pivot_deg:
                pivot_v, pivot_deg = v, len(ids)
        assert pivot_v is not None
        # branch: each edge at the pivot, or drop the pivot entirely
        for eid in sorted(alive_per_v[pivot_v]):
            nxt = {f for f in avail if not (h.edges[f] & h.edges[eid])}
            rec(nxt, m + [eid])
        rec({f for f in avail if pivot_v not in h.edges[f]}, m)

    rec(set(range(h.e())), [])
    return best["m"]
