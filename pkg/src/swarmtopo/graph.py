"""Communication topologies and their structural metrics.

Graphs are immutable, undirected and simple.  Edges are stored in canonical
``(min, max)`` form, so two graphs are equal exactly when their node count and
canonical edge sets are equal.
"""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np

Edge = tuple[int, int]


class GraphError(ValueError):
    pass


class InvalidSize(GraphError):
    pass


class InvalidDegree(GraphError):
    pass


class InvalidSpec(GraphError):
    pass


class TooManyEdges(GraphError):
    pass


class SelfLoop(GraphError):
    pass


class OutOfRange(GraphError):
    pass


def canonical(u: int, v: int) -> Edge:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class Graph:
    n: int
    edges: frozenset[Edge]

    def __post_init__(self):
        for u, v in self.edges:
            if u == v:
                raise SelfLoop(f"self-loop at node {u}")
            if not (0 <= u < v < self.n):
                raise OutOfRange(f"edge ({u}, {v}) is not canonical or not in [0, {self.n})")

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "Graph":
        canon = set()
        for u, v in edges:
            if u == v:
                raise SelfLoop(f"self-loop at node {u}")
            canon.add(canonical(u, v))
        return cls(n, frozenset(canon))

    @cached_property
    def adjacency(self) -> tuple[frozenset[int], ...]:
        adj: list[set[int]] = [set() for _ in range(self.n)]
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return tuple(frozenset(a) for a in adj)

    def neighbors(self, u: int) -> list[int]:
        return sorted(self.adjacency[u])

    def degree(self, u: int) -> int:
        return len(self.adjacency[u])

    def degrees(self) -> list[int]:
        return [len(a) for a in self.adjacency]

    def has_edge(self, u: int, v: int) -> bool:
        return canonical(u, v) in self.edges

    def edge_list(self) -> list[Edge]:
        """Edges in canonical lexicographic order."""
        return sorted(self.edges)

    def to_matrix(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=np.int64)
        for u, v in self.edges:
            a[u, v] = a[v, u] = 1
        return a

    def snapshot_id(self) -> str:
        """Short stable digest of the canonical edge list."""
        import hashlib

        return hashlib.blake2b(to_edgelist(self).encode(), digest_size=6).hexdigest()


class Kind(str, enum.Enum):
    COMPLETE = "complete"
    RING = "ring"
    RAND = "rand"
    SMALLWORLD = "smallworld"


DEFAULT_SW_P = 0.1


@dataclass(frozen=True)
class TopologySpec:
    kind: Kind
    n: int
    k: int = 2
    p: float = DEFAULT_SW_P
    seed: int = 0
    name: str | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))

    def validate(self) -> "TopologySpec":
        if self.n < 3:
            raise InvalidSpec(f"n must be >= 3, got {self.n}")
        if self.kind is not Kind.COMPLETE:
            if self.k % 2 or not (2 <= self.k <= self.n - 1):
                raise InvalidSpec(f"k must be even with 2 <= k <= n-1, got k={self.k}, n={self.n}")
        if not (0.0 <= self.p <= 1.0):
            raise InvalidSpec(f"p must lie in [0, 1], got {self.p}")
        if not (0 <= self.seed < 2**64):
            raise InvalidSpec("seed must be a 64-bit unsigned integer")
        return self

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind is Kind.COMPLETE:
            return "complete"
        if self.kind is Kind.SMALLWORLD:
            return f"smallworld(k={self.k},p={self.p:g})"
        return f"{self.kind.value}(k={self.k})"

    def with_seed(self, seed: int) -> "TopologySpec":
        return TopologySpec(self.kind, self.n, self.k, self.p, seed, self.name)


@dataclass(frozen=True)
class GraphMetrics:
    clustering: float
    avg_path_len: float
    connected: bool
    rewired_edges: tuple[Edge, ...] = ()


def ring_lattice(n: int, k: int) -> Graph:
    if n < 3:
        raise InvalidSize(f"ring lattice needs n >= 3, got {n}")
    if k % 2 or not (2 <= k <= n - 1):
        raise InvalidDegree(f"k must be even with 2 <= k <= n-1, got k={k}, n={n}")
    edges = {canonical(i, (i + j) % n) for i in range(n) for j in range(1, k // 2 + 1)}
    return Graph(n, frozenset(edges))


def complete_graph(n: int) -> Graph:
    if n < 2:
        raise InvalidSize(f"complete graph needs n >= 2, got {n}")
    return Graph(n, frozenset((u, v) for u in range(n) for v in range(u + 1, n)))


def random_graph(n: int, m: int, rng: random.Random) -> Graph:
    """``m`` edges sampled uniformly without replacement from all node pairs."""
    pairs = n * (n - 1) // 2
    if m < 0 or m > pairs:
        raise TooManyEdges(f"cannot place {m} edges on {n} nodes ({pairs} pairs)")
    picks = rng.sample(range(pairs), m)
    return Graph(n, frozenset(_pair_from_index(i, n) for i in picks))


def _pair_from_index(i: int, n: int) -> Edge:
    # Row-major enumeration of pairs (u, v), u < v.
    u = 0
    row = n - 1
    while i >= row:
        i -= row
        u += 1
        row -= 1
    return (u, u + 1 + i)


def watts_strogatz(spec: TopologySpec, rng: random.Random) -> tuple[Graph, list[Edge]]:
    """Rewire a ring lattice with probability ``spec.p`` per clockwise edge.

    Nodes are visited in ascending order and, for each, the lattice edges
    ``(u, u+j)`` for ``j = 1..k/2``.  A rewired edge keeps ``u`` and takes a new
    far endpoint drawn uniformly among nodes not yet adjacent to ``u``.  Nodes
    that are already adjacent to everyone keep their edge.

    Returns the graph and the newly created edges in visit order.
    """
    if spec.kind is not Kind.SMALLWORLD:
        raise InvalidSpec(f"watts_strogatz needs a SmallWorld spec, got {spec.kind.value}")
    spec.validate()
    n, k, p = spec.n, spec.k, spec.p
    adj = [set(a) for a in ring_lattice(n, k).adjacency]
    rewired: list[Edge] = []
    for u in range(n):
        for j in range(1, k // 2 + 1):
            v = (u + j) % n
            if rng.random() >= p:
                continue
            if len(adj[u]) >= n - 1:
                continue
            while True:
                w = rng.randrange(n)
                if w != u and w not in adj[u]:
                    break
            adj[u].discard(v)
            adj[v].discard(u)
            adj[u].add(w)
            adj[w].add(u)
            rewired.append(canonical(u, w))
    edges = frozenset(canonical(u, v) for u in range(n) for v in adj[u] if u < v)
    return Graph(n, edges), rewired


def build_topology(spec: TopologySpec, rng: random.Random) -> tuple[Graph, list[Edge]]:
    """One draw of ``spec``'s graph plus its rewired edges (SmallWorld only).

    Rand places ``n*k/2`` uniformly random edges, the Ring's edge budget.
    """
    spec.validate()
    if spec.kind is Kind.COMPLETE:
        return complete_graph(spec.n), []
    if spec.kind is Kind.RING:
        return ring_lattice(spec.n, spec.k), []
    if spec.kind is Kind.RAND:
        return random_graph(spec.n, spec.n * spec.k // 2, rng), []
    return watts_strogatz(spec, rng)


def add_edge(g: Graph, u: int, v: int) -> Graph:
    if u == v:
        raise SelfLoop(f"cannot add self-loop at node {u}")
    if not (0 <= u < g.n and 0 <= v < g.n):
        raise OutOfRange(f"edge ({u}, {v}) outside [0, {g.n})")
    e = canonical(u, v)
    if e in g.edges:
        return g
    return Graph(g.n, g.edges | {e})


def metrics(g: Graph, rewired_edges: Iterable[Edge] = ()) -> GraphMetrics:
    """Average local clustering and mean BFS distance over reachable ordered pairs.

    All sources are expanded at once with boolean frontier products on the
    adjacency matrix; path lengths are integers so the mean is exact.
    """
    n = g.n
    rewired = tuple(canonical(*e) for e in rewired_edges)
    if n == 0:
        return GraphMetrics(0.0, 0.0, True, rewired)
    a = g.to_matrix()
    deg = a.sum(axis=1)
    tri = np.einsum("ij,jk,ki->i", a, a, a) // 2

    total = 0.0
    for i in range(n):
        d = int(deg[i])
        if d >= 2:
            total += int(tri[i]) / (d * (d - 1) / 2)
    clustering = total / n

    reached = np.eye(n, dtype=bool)
    frontier = reached.copy()
    af = a.astype(np.float64)
    dist_sum = 0
    pairs = 0
    depth = 0
    while frontier.any():
        depth += 1
        nxt = ((frontier.astype(np.float64) @ af) > 0) & ~reached
        cnt = int(nxt.sum())
        dist_sum += depth * cnt
        pairs += cnt
        reached |= nxt
        frontier = nxt
    avg = dist_sum / pairs if pairs else 0.0
    connected = bool(reached.all())
    return GraphMetrics(clustering, avg, connected, rewired)


def to_edgelist(g: Graph) -> str:
    lines = [f"n={g.n}"]
    lines.extend(f"{u} {v}" for u, v in g.edge_list())
    return "\n".join(lines) + "\n"


def from_edgelist(text: str) -> Graph:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("n="):
        raise GraphError("edge list must start with 'n=<n>'")
    n = int(lines[0][2:])
    edges = []
    for ln in lines[1:]:
        u, v = ln.split()
        edges.append((int(u), int(v)))
    return Graph.from_edges(n, edges)
