"""Single-guest embedding into a blow-up structure with candidate sets.

The fast path is a random greedy in most-constrained-first order with
candidate-set intersection maintenance, an augmenting-path repair inside a
cluster, and a neighbour-relocation repair across clusters.  When the
greedy corners itself, a min-conflicts local search over complete
per-cluster bijections takes over; tiny tasks fall back to exhaustive
backtracking.  A per-cluster Hall check on the static candidate rows
certifies infeasible tasks before any search runs.

On success the result is exact: every guest edge lands on an allowed host
pair, every vertex inside its candidate set, each cluster bijectively
covered.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .graphs import Graph
from .rng import derive_rng, mask_to_list


class EmbeddingFailure(RuntimeError):
    def __init__(self, msg: str, stuck_vertex=None, live_candidates=None):
        super().__init__(msg)
        self.stuck_vertex = stuck_vertex
        self.live_candidates = live_candidates


@dataclass
class EmbeddingTask:
    """Guest batch split into clusters, target slots per cluster, candidate
    rows, and host adjacency between slot sets.

    clusters[i] lists guest vertex ids; slots[i] lists host vertex ids of
    the same length.  candidates[(i, k)] is a bitmask over slots[i] for the
    k-th vertex of cluster i.  adjacency[(i, j)][a] is a bitmask over
    slots[j] of host neighbours of slot a of cluster i, for every cluster
    pair carrying guest edges.
    """

    graph: Graph
    clusters: list[list[int]]
    slots: list[list[int]]
    candidates: dict[tuple[int, int], int]
    adjacency: dict[tuple[int, int], list[int]]

    def __post_init__(self) -> None:
        if len(self.clusters) != len(self.slots):
            raise ValueError("clusters and slots must align")
        for i, (cl, sl) in enumerate(zip(self.clusters, self.slots)):
            if len(cl) != len(sl):
                raise ValueError(f"cluster {i}: |X_i| != |V_i|")

    def cluster_of(self) -> dict[int, tuple[int, int]]:
        out = {}
        for i, cl in enumerate(self.clusters):
            for k, x in enumerate(cl):
                out[x] = (i, k)
        return out


def embed_single(task: EmbeddingTask, params: Optional[dict] = None
                 ) -> dict[int, int]:
    """Embed the task's guest; returns {guest vertex: host vertex}.

    params: seed (default 0), max_backtrack (default 50 per vertex),
    restarts (default 20), exhaustive_limit (default 8), move_budget for
    the local search (default 120000).
    """
    params = dict(params or {})
    seed = int(params.get("seed", 0))
    max_backtrack = int(params.get("max_backtrack", 50))
    restarts = int(params.get("restarts", 20))
    exhaustive_limit = int(params.get("exhaustive_limit", 8))
    move_budget = int(params.get("move_budget", 120000))

    owner = task.cluster_of()
    for u, v in task.graph.edges():
        iu, _ = owner[u]
        iv, _ = owner[v]
        if iu == iv:
            raise ValueError(f"edge {u}-{v} inside one cluster")
        if (iu, iv) not in task.adjacency:
            raise ValueError(f"no adjacency for cluster pair ({iu},{iv})")

    _hall_precheck(task, owner)

    last_fail: Optional[EmbeddingFailure] = None
    for attempt in range(restarts):
        rng = derive_rng(seed, "embed", attempt)
        try:
            phi = _greedy_embed(task, owner, rng, max_backtrack)
            _verify_embedding(task, owner, phi)
            return phi
        except EmbeddingFailure as exc:
            last_fail = exc
        # greedy corners itself in tight endgames; min-conflicts over
        # complete per-cluster bijections resolves them
        rng = derive_rng(seed, "minconf", attempt)
        total = sum(len(c) for c in task.clusters)
        phi = _min_conflicts_embed(task, owner, rng,
                                   min(move_budget, 400 * total + 400))
        if phi is not None:
            _verify_embedding(task, owner, phi)
            return phi
    if max(len(c) for c in task.clusters) <= exhaustive_limit:
        phi = _exhaustive_embed(task, owner)
        if phi is not None:
            _verify_embedding(task, owner, phi)
            return phi
        raise EmbeddingFailure("task infeasible (exhausted all assignments)")
    assert last_fail is not None
    raise last_fail


def _hall_precheck(task, owner) -> None:
    """Per-cluster bipartite saturation on the static candidate rows; a
    deficiency certifies infeasibility before any search runs."""
    for i, cl in enumerate(task.clusters):
        rows = [task.candidates.get((i, k), 0) for k in range(len(cl))]
        if _max_bipartite(rows, len(task.slots[i])) < len(cl):
            raise EmbeddingFailure(
                f"cluster {i} candidate rows are Hall-deficient")


def _max_bipartite(rows: list[int], nslots: int) -> int:
    match_slot = [-1] * nslots

    def aug(u: int, seen: set[int]) -> bool:
        m = rows[u]
        while m:
            s = (m & -m).bit_length() - 1
            m &= m - 1
            if s in seen:
                continue
            seen.add(s)
            if match_slot[s] < 0 or aug(match_slot[s], seen):
                match_slot[s] = u
                return True
        return False

    got = 0
    for u in range(len(rows)):
        if aug(u, set()):
            got += 1
    return got


def _constraint_masks(task, owner, x, assignment) -> int:
    """Candidate mask of x under its placed neighbours (free slots not
    considered)."""
    i, k = owner[x]
    mask = task.candidates.get((i, k), 0)
    for y in task.graph.neighbors(x):
        j, _ = owner[y]
        vy = assignment.get(y)
        if vy is not None:
            mask &= task.adjacency[(j, i)][vy]
    return mask


def _greedy_embed(task, owner, rng, max_backtrack) -> dict[int, int]:
    nclusters = len(task.clusters)
    free = [(1 << len(task.slots[i])) - 1 for i in range(nclusters)]
    assignment: dict[int, int] = {}   # guest vertex -> slot index
    placed_nbrs = {x: 0 for cl in task.clusters for x in cl}
    order_pool = set(placed_nbrs)

    def live_mask(x):
        i, _ = owner[x]
        return _constraint_masks(task, owner, x, assignment) & free[i]

    budget = {x: max_backtrack for x in order_pool}

    while order_pool:
        # most-constrained variable first: fewest live candidates, then most
        # placed neighbours; embeds outward from anchors along the guest
        best = None
        for x in order_pool:
            key = (live_mask(x).bit_count(), -placed_nbrs[x], owner[x], x)
            if best is None or key < best[0]:
                best = (key, x)
        x = best[1]
        i, _k = owner[x]
        live = live_mask(x)
        if live == 0:
            if not _repair(task, owner, assignment, free, x, rng, budget) \
                    and not _relocate_neighbours(task, owner, assignment,
                                                 free, x, rng, budget):
                raise EmbeddingFailure(
                    f"candidate set of vertex {x} empty",
                    stuck_vertex=x,
                    live_candidates=mask_to_list(
                        _constraint_masks(task, owner, x, assignment)))
            live = live_mask(x)
        choices = mask_to_list(live)
        if len(choices) > 1:
            slot = _pick_slot(task, owner, assignment, free, x, i, choices,
                              rng)
        else:
            slot = choices[0]
        assignment[x] = slot
        free[i] &= ~(1 << slot)
        order_pool.discard(x)
        for y in task.graph.neighbors(x):
            if y in order_pool:
                placed_nbrs[y] += 1
    return {x: task.slots[owner[x][0]][s] for x, s in assignment.items()}


def _pick_slot(task, owner, assignment, free, x, i, choices, rng,
               sample: int = 12) -> int:
    """Choose among x's live slots the one that keeps every unplaced
    in-batch neighbour's option count healthy (max-min look-ahead)."""
    nbrs = [y for y in task.graph.neighbors(x) if y not in assignment]
    if not nbrs:
        return choices[rng.randrange(len(choices))]
    pool = choices if len(choices) <= sample else rng.sample(choices, sample)
    nbr_masks = []
    for y in nbrs:
        j, _ = owner[y]
        base = _constraint_masks(task, owner, y, assignment) & free[j]
        nbr_masks.append((y, j, base))
    best_slots = []
    best_score = None
    for s in pool:
        score = None
        for y, j, base in nbr_masks:
            opts = (base & task.adjacency[(i, j)][s]).bit_count()
            if score is None or opts < score:
                score = opts
        if best_score is None or score > best_score:
            best_score = score
            best_slots = [s]
        elif score == best_score:
            best_slots.append(s)
    return best_slots[rng.randrange(len(best_slots))]


def _repair(task, owner, assignment, free, x, rng, budget) -> bool:
    """Augmenting-path repair within x's cluster.

    Treat the cluster's placed vertices as a partial bipartite matching to
    slots; search an alternating path from x to a free slot where every
    relocation keeps the mover adjacent to all its placed neighbours."""
    if budget[x] <= 0:
        return False
    i, _ = owner[x]
    holders = {s: y for y, s in assignment.items() if owner[y][0] == i}
    start = _constraint_masks(task, owner, x, assignment)
    if start == 0:
        return False
    parent: dict[int, tuple[Optional[int], Optional[int]]] = {}
    queue: list[int] = []
    target = None
    for s in mask_to_list(start):
        parent[s] = (None, None)
        if (free[i] >> s) & 1:
            target = s
            break
        queue.append(s)
    visited_budget = budget[x]
    qi = 0
    while target is None and qi < len(queue):
        s = queue[qi]
        qi += 1
        visited_budget -= 1
        if visited_budget <= 0:
            break
        y = holders.get(s)
        if y is None:
            continue
        alt = _constraint_masks(task, owner, y, assignment) & ~(1 << s)
        for s2 in mask_to_list(alt):
            if s2 in parent:
                continue
            parent[s2] = (s, y)
            if (free[i] >> s2) & 1:
                target = s2
                break
            queue.append(s2)
    budget[x] = max(0, visited_budget)
    if target is None:
        return False
    # unwind: shift every mover one slot toward the free end
    s2 = target
    while True:
        s_prev, y = parent[s2]
        if s_prev is None:
            # s2 is now free for x; the caller's normal path places x
            return True
        assignment[y] = s2
        free[i] &= ~(1 << s2)
        free[i] |= 1 << s_prev
        s2 = s_prev


def _relocate_neighbours(task, owner, assignment, free, x, rng,
                         budget) -> bool:
    """Adjacency-dead repair: move one placed neighbour of x to another slot
    (compatible with all of its own placed neighbours) that reopens options
    for x."""
    if budget[x] <= 0:
        return False
    i, k = owner[x]
    static = task.candidates.get((i, k), 0)
    for y in task.graph.neighbors(x):
        sy = assignment.get(y)
        if sy is None:
            continue
        j, _ = owner[y]
        budget[x] -= 1
        if budget[x] < 0:
            return False
        del assignment[y]
        free[j] |= 1 << sy
        alt = _constraint_masks(task, owner, y, assignment) & free[j]
        rest = _constraint_masks(task, owner, x, assignment)
        best = None
        m = alt
        while m:
            s2 = (m & -m).bit_length() - 1
            m &= m - 1
            gain = (static & rest & task.adjacency[(j, i)][s2]
                    & free[i]).bit_count()
            if gain > 0 and (best is None or gain > best[0]):
                best = (gain, s2)
        if best is not None:
            s2 = best[1]
            assignment[y] = s2
            free[j] &= ~(1 << s2)
            if _constraint_masks(task, owner, x, assignment) & free[i]:
                return True
            del assignment[y]
            free[j] |= 1 << s2
        assignment[y] = sy
        free[j] &= ~(1 << sy)
    return False


def _min_conflicts_embed(task, owner, rng, move_budget: int
                         ) -> Optional[dict[int, int]]:
    """Min-conflicts over complete per-cluster bijections.

    Start from a random bijection per cluster and repeatedly swap the slots
    of a violated vertex with the best counterpart in its cluster; a small
    noise rate escapes plateaus.  Cost counts candidate-row misses and guest
    edges off host edges."""
    slot_of: dict[int, int] = {}
    at_slot: list[list[Optional[int]]] = []
    for i, cl in enumerate(task.clusters):
        perm = list(range(len(task.slots[i])))
        rng.shuffle(perm)
        at_slot.append([None] * len(task.slots[i]))
        for x, s in zip(cl, perm):
            slot_of[x] = s
            at_slot[i][s] = x

    def row_ok(x, s) -> bool:
        return bool((task.candidates[owner[x]] >> s) & 1)

    def edge_ok(x, sx, y, sy) -> bool:
        i, _ = owner[x]
        j, _ = owner[y]
        return bool((task.adjacency[(i, j)][sx] >> sy) & 1)

    def vertex_conflicts(x, s) -> int:
        c = 0 if row_ok(x, s) else 1
        for y in task.graph.neighbors(x):
            if not edge_ok(x, s, y, slot_of[y]):
                c += 1
        return c

    violated: set[int] = set()
    for cl in task.clusters:
        for x in cl:
            if vertex_conflicts(x, slot_of[x]):
                violated.add(x)

    def refresh(x) -> None:
        if vertex_conflicts(x, slot_of[x]):
            violated.add(x)
        else:
            violated.discard(x)

    noise = 0.06
    for _move in range(move_budget):
        if not violated:
            return {x: task.slots[owner[x][0]][s]
                    for x, s in slot_of.items()}
        x = rng.choice(tuple(violated))
        i, _ = owner[x]
        sx = slot_of[x]
        base = vertex_conflicts(x, sx)
        if rng.random() < noise:
            cand_slots = [rng.randrange(len(task.slots[i]))]
        else:
            cand_slots = range(len(task.slots[i]))
        best_delta = None
        best_s = None
        for s2 in cand_slots:
            if s2 == sx:
                continue
            y = at_slot[i][s2]
            before = base + (vertex_conflicts(y, s2) if y is not None else 0)
            slot_of[x] = s2
            if y is not None:
                slot_of[y] = sx
            after = vertex_conflicts(x, s2) + (
                vertex_conflicts(y, sx) if y is not None else 0)
            slot_of[x] = sx
            if y is not None:
                slot_of[y] = s2
            delta = after - before
            if best_delta is None or delta < best_delta or (
                    delta == best_delta and rng.random() < 0.5):
                best_delta = delta
                best_s = s2
        if best_s is None:
            continue
        s2 = best_s
        y = at_slot[i][s2]
        slot_of[x] = s2
        at_slot[i][s2] = x
        at_slot[i][sx] = y
        if y is not None:
            slot_of[y] = sx
        refresh(x)
        if y is not None:
            refresh(y)
        for z in task.graph.neighbors(x):
            refresh(z)
        if y is not None:
            for z in task.graph.neighbors(y):
                refresh(z)
    return None


def _exhaustive_embed(task, owner) -> Optional[dict[int, int]]:
    verts = [x for cl in task.clusters for x in cl]
    verts.sort(key=lambda x: -task.graph.degree(x))
    free = [(1 << len(task.slots[i])) - 1 for i in range(len(task.clusters))]
    assignment: dict[int, int] = {}

    def rec(idx: int) -> bool:
        if idx == len(verts):
            return True
        x = verts[idx]
        i, _ = owner[x]
        live = _constraint_masks(task, owner, x, assignment) & free[i]
        m = live
        while m:
            s = (m & -m).bit_length() - 1
            m &= m - 1
            assignment[x] = s
            free[i] &= ~(1 << s)
            if rec(idx + 1):
                return True
            del assignment[x]
            free[i] |= 1 << s
        return False

    if rec(0):
        return {x: task.slots[owner[x][0]][s] for x, s in assignment.items()}
    return None


def _verify_embedding(task, owner, phi: dict[int, int]) -> None:
    """Exact triple check: bijectivity per cluster, candidate membership,
    edge preservation."""
    for i, cl in enumerate(task.clusters):
        images = [phi[x] for x in cl]
        if sorted(images) != sorted(task.slots[i]):
            raise AssertionError(f"cluster {i} not bijectively covered")
    slot_pos = [{v: k for k, v in enumerate(sl)} for sl in task.slots]
    for x, v in phi.items():
        i, k = owner[x]
        if not (task.candidates.get((i, k), 0) >> slot_pos[i][v]) & 1:
            raise AssertionError(f"vertex {x} placed outside its candidates")
    for u, v in task.graph.edges():
        iu, _ = owner[u]
        iv, _ = owner[v]
        su = slot_pos[iu][phi[u]]
        sv = slot_pos[iv][phi[v]]
        if not (task.adjacency[(iu, iv)][su] >> sv) & 1:
            raise AssertionError(f"guest edge {u}-{v} not on a host edge")
