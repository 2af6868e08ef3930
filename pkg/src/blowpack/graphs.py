"""Graph and bipartite-pair data model.

Adjacency is stored as one integer bitmask per vertex; intersection counts
are population counts, which is what the codegree scans in `regularity`
lean on.  Graphs are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

from .jsonio import FORMAT_VERSION
from .rng import mask_to_list


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on vertices 0..n-1."""

    n: int
    rows: tuple[int, ...]
    labels: Optional[tuple[object, ...]] = None

    def __post_init__(self) -> None:
        if self.n < 0:
            raise GraphError("vertex_count must be >= 0")
        if len(self.rows) != self.n:
            raise GraphError("adjacency rows must match vertex count")
        for u, row in enumerate(self.rows):
            if row >> self.n:
                raise GraphError(f"row {u} references vertices >= n")
            if row & (1 << u):
                raise GraphError(f"self-loop at vertex {u}")
        # symmetry check (cheap: u in rows[v] iff v in rows[u])
        for u, row in enumerate(self.rows):
            m = row
            while m:
                v = (m & -m).bit_length() - 1
                if not (self.rows[v] >> u) & 1:
                    raise GraphError(f"adjacency not symmetric at ({u},{v})")
                m &= m - 1

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]],
                   labels: Optional[Sequence[object]] = None) -> "Graph":
        rows = [0] * n
        for u, v in edges:
            if u == v:
                raise GraphError(f"self-loop at vertex {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise GraphError(f"edge ({u},{v}) out of range")
            rows[u] |= 1 << v
            rows[v] |= 1 << u
        return cls(n, tuple(rows), tuple(labels) if labels is not None else None)

    @classmethod
    def empty(cls, n: int) -> "Graph":
        return cls(n, tuple([0] * n))

    def neighbors_mask(self, u: int) -> int:
        return self.rows[u]

    def neighbors(self, u: int) -> list[int]:
        return mask_to_list(self.rows[u])

    def degree(self, u: int) -> int:
        return self.rows[u].bit_count()

    def max_degree(self) -> int:
        return max((r.bit_count() for r in self.rows), default=0)

    def has_edge(self, u: int, v: int) -> bool:
        return bool((self.rows[u] >> v) & 1)

    def common_neighbors_mask(self, us: Iterable[int]) -> int:
        m = (1 << self.n) - 1
        for u in us:
            m &= self.rows[u]
        return m

    def edge_count(self) -> int:
        return sum(r.bit_count() for r in self.rows) // 2

    def edges(self) -> Iterator[tuple[int, int]]:
        for u, row in enumerate(self.rows):
            m = row >> (u + 1) << (u + 1)
            while m:
                v = (m & -m).bit_length() - 1
                yield (u, v)
                m &= m - 1

    def edges_between(self, amask: int, bmask: int) -> int:
        """Number of edges with one endpoint in A and the other in B.

        Disjoint masks only; for A == B use `edges_within`.
        """
        total = 0
        m = amask
        while m:
            u = (m & -m).bit_length() - 1
            total += (self.rows[u] & bmask).bit_count()
            m &= m - 1
        return total

    def edges_within(self, amask: int) -> int:
        total = 0
        m = amask
        while m:
            u = (m & -m).bit_length() - 1
            total += (self.rows[u] & amask).bit_count()
            m &= m - 1
        return total // 2

    def power(self, k: int) -> "Graph":
        """Graph with edges between vertices at distance <= k."""
        if k < 1:
            raise GraphError("power requires k >= 1")
        reach = list(self.rows)
        rows = list(self.rows)
        for _ in range(k - 1):
            new = []
            for u in range(self.n):
                m = reach[u]
                acc = rows[u]
                while m:
                    v = (m & -m).bit_length() - 1
                    acc |= self.rows[v]
                    m &= m - 1
                acc &= ~(1 << u)
                new.append(acc)
            reach = new
        return Graph(self.n, tuple(reach if k > 1 else rows))

    def minus(self, other: "Graph") -> "Graph":
        """G - H: remove other's edges, keep the vertex set."""
        if other.n != self.n:
            raise GraphError("minus requires graphs on the same vertex set")
        return Graph(self.n, tuple(r & ~o for r, o in zip(self.rows, other.rows)))

    def union(self, other: "Graph") -> "Graph":
        if other.n != self.n:
            raise GraphError("union requires graphs on the same vertex set")
        return Graph(self.n, tuple(r | o for r, o in zip(self.rows, other.rows)))

    def to_json(self) -> dict:
        return {"format": FORMAT_VERSION, "n": self.n,
                "edges": [[u, v] for u, v in self.edges()]}

    @classmethod
    def from_json(cls, obj: dict) -> "Graph":
        return cls.from_edges(int(obj["n"]), [tuple(e) for e in obj["edges"]])


@dataclass(frozen=True)
class BipartitePair:
    """Bipartite graph on disjoint sides 0..nl-1 (left) and 0..nr-1 (right).

    `rows[u]` is the bitmask of right-neighbours of left vertex u.
    """

    nl: int
    nr: int
    rows: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.nl < 0 or self.nr < 0:
            raise GraphError("side sizes must be >= 0")
        if len(self.rows) != self.nl:
            raise GraphError("rows must match left size")
        for u, row in enumerate(self.rows):
            if row >> self.nr:
                raise GraphError(f"row {u} references right vertices >= nr")

    @classmethod
    def from_edges(cls, nl: int, nr: int,
                   edges: Iterable[tuple[int, int]]) -> "BipartitePair":
        rows = [0] * nl
        for u, v in edges:
            if not (0 <= u < nl and 0 <= v < nr):
                raise GraphError(f"edge ({u},{v}) out of range")
            rows[u] |= 1 << v
        return cls(nl, nr, tuple(rows))

    @classmethod
    def complete(cls, nl: int, nr: int) -> "BipartitePair":
        full = (1 << nr) - 1
        return cls(nl, nr, tuple([full] * nl))

    def cols(self) -> tuple[int, ...]:
        """Per-right-vertex bitmask over the left side (transposed rows)."""
        cols = [0] * self.nr
        for u, row in enumerate(self.rows):
            m = row
            while m:
                v = (m & -m).bit_length() - 1
                cols[v] |= 1 << u
                m &= m - 1
        return tuple(cols)

    def transpose(self) -> "BipartitePair":
        return BipartitePair(self.nr, self.nl, self.cols())

    def edge_count(self) -> int:
        return sum(r.bit_count() for r in self.rows)

    def edges(self) -> Iterator[tuple[int, int]]:
        for u, row in enumerate(self.rows):
            m = row
            while m:
                v = (m & -m).bit_length() - 1
                yield (u, v)
                m &= m - 1

    def degree_left(self, u: int) -> int:
        return self.rows[u].bit_count()

    def edges_between(self, left_mask: int, right_mask: int) -> int:
        total = 0
        m = left_mask
        while m:
            u = (m & -m).bit_length() - 1
            total += (self.rows[u] & right_mask).bit_count()
            m &= m - 1
        return total

    def to_json(self) -> dict:
        return {"format": FORMAT_VERSION, "nl": self.nl, "nr": self.nr,
                "edges": [[u, v] for u, v in self.edges()]}

    @classmethod
    def from_json(cls, obj: dict) -> "BipartitePair":
        return cls.from_edges(int(obj["nl"]), int(obj["nr"]),
                              [tuple(e) for e in obj["edges"]])


def random_graph(n: int, p: float, seed: int) -> Graph:
    """Erdős–Rényi G(n,p), seeded."""
    from .rng import derive_rng

    rng = derive_rng(seed, "gnp", n)
    rows = [0] * n
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < p:
                rows[u] |= 1 << v
                rows[v] |= 1 << u
    return Graph(n, tuple(rows))


def random_bipartite(nl: int, nr: int, p: float, seed: int) -> BipartitePair:
    from .rng import derive_rng

    rng = derive_rng(seed, "bip", nl, nr)
    rows = [0] * nl
    for u in range(nl):
        m = 0
        for v in range(nr):
            if rng.random() < p:
                m |= 1 << v
        rows[u] = m
    return BipartitePair(nl, nr, tuple(rows))
