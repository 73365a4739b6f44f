"""DAGs, reachability, Markov equivalence and exact DAG enumeration.

Nodes are dense integer ids ``0..n-1``; names live at the I/O boundary
(see :mod:`bnpp.serialize`). A closure matrix is an ``n x n`` boolean
``numpy`` array whose entry ``(u, v)`` is true iff there is a directed path
``u => v`` of at least one edge.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator

import numpy as np

from .errors import CycleError, MissingEdgeError, SizeMismatchError, TooLargeError

Edge = tuple[int, int]

MAX_ENUMERATION_NODES = 6

ABSENT, UNDIRECTED, FORWARD, BACKWARD = 0, 1, 2, 3


class Dag:
    """Labeled directed acyclic graph with parent and child sets per node."""

    def __init__(self, n: int, edges: Iterable[Edge] = ()):
        self.n = n
        self._parents: list[set[int]] = [set() for _ in range(n)]
        self._children: list[set[int]] = [set() for _ in range(n)]
        for u, v in edges:
            self._link(u, v)
        self.topological_order()

    @classmethod
    def from_parent_masks(cls, masks: Iterable[int]) -> Dag:
        masks = list(masks)
        g = cls(len(masks))
        for v, mask in enumerate(masks):
            for u in _bits(mask):
                g._link(u, v)
        return g

    @classmethod
    def from_adjacency(cls, adj: np.ndarray) -> Dag:
        rows, cols = np.nonzero(adj)
        return cls(adj.shape[0], zip(rows.tolist(), cols.tolist()))

    def _link(self, u: int, v: int) -> None:
        if u == v:
            raise CycleError((u, v))
        if not (0 <= u < self.n and 0 <= v < self.n):
            raise ValueError(f"edge {u}->{v} outside node range 0..{self.n - 1}")
        self._parents[v].add(u)
        self._children[u].add(v)

    def copy(self) -> Dag:
        g = Dag(self.n)
        g._parents = [set(p) for p in self._parents]
        g._children = [set(c) for c in self._children]
        return g

    def has_edge(self, u: int, v: int) -> bool:
        return u in self._parents[v]

    def adjacent(self, u: int, v: int) -> bool:
        return u in self._parents[v] or v in self._parents[u]

    def parents(self, v: int) -> set[int]:
        return self._parents[v]

    def children(self, u: int) -> set[int]:
        return self._children[u]

    def edges(self) -> list[Edge]:
        return sorted((u, v) for v in range(self.n) for u in self._parents[v])

    @property
    def num_edges(self) -> int:
        return sum(len(p) for p in self._parents)

    def add_edge(self, u: int, v: int, *, check_acyclic: bool = True) -> None:
        if check_acyclic and (u == v or self.has_path(v, u)):
            raise CycleError((u, v))
        self._link(u, v)

    def remove_edge(self, u: int, v: int) -> None:
        if not self.has_edge(u, v):
            raise MissingEdgeError((u, v))
        self._parents[v].discard(u)
        self._children[u].discard(v)

    def reverse_edge(self, u: int, v: int, *, check_acyclic: bool = True) -> None:
        self.remove_edge(u, v)
        try:
            self.add_edge(v, u, check_acyclic=check_acyclic)
        except CycleError:
            self._link(u, v)
            raise

    def has_path(self, src: int, dst: int) -> bool:
        stack = list(self._children[src])
        seen = set(stack)
        while stack:
            w = stack.pop()
            if w == dst:
                return True
            for c in self._children[w]:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return False

    def topological_order(self) -> list[int]:
        indeg = [len(p) for p in self._parents]
        queue = deque(v for v in range(self.n) if indeg[v] == 0)
        order: list[int] = []
        while queue:
            u = queue.popleft()
            order.append(u)
            for c in sorted(self._children[u]):
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        if len(order) != self.n:
            stuck = next(v for v in range(self.n) if indeg[v] > 0)
            raise CycleError((next(iter(self._parents[stuck])), stuck))
        return order

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n, self.n), dtype=bool)
        for u, v in self.edges():
            adj[u, v] = True
        return adj

    def skeleton(self) -> frozenset[Edge]:
        return frozenset((min(u, v), max(u, v)) for u, v in self.edges())

    def colliders(self) -> frozenset[tuple[int, int, int]]:
        """Unshielded colliders ``a -> b <- c`` as ``(a, b, c)`` with ``a < c``."""
        out = set()
        for b in range(self.n):
            for a, c in itertools.combinations(sorted(self._parents[b]), 2):
                if not self.adjacent(a, c):
                    out.add((a, b, c))
        return frozenset(out)

    def key(self) -> tuple[int, ...]:
        return tuple(sum(1 << u for u in p) for p in self._parents)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Dag) and self.n == other.n and self._parents == other._parents

    def __hash__(self) -> int:
        return hash((self.n, self.key()))

    def __repr__(self) -> str:
        arcs = ", ".join(f"{u}->{v}" for u, v in self.edges())
        return f"Dag(n={self.n}, [{arcs}])"


@dataclass(frozen=True)
class Pdag:
    """Partially directed graph; undirected edges are stored as ``(min, max)``."""

    n: int
    directed: frozenset[Edge]
    undirected: frozenset[Edge]

    def __post_init__(self) -> None:
        pairs = {(min(u, v), max(u, v)) for u, v in self.directed}
        if len(pairs) != len(self.directed) or pairs & self.undirected:
            raise ValueError("directed and undirected edge sets overlap")

    def status(self, i: int, j: int) -> int:
        if (i, j) in self.directed:
            return FORWARD
        if (j, i) in self.directed:
            return BACKWARD
        if (min(i, j), max(i, j)) in self.undirected:
            return UNDIRECTED
        return ABSENT


def _bits(mask: int) -> Iterator[int]:
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def _submasks(mask: int, *, nonempty: bool) -> list[int]:
    out = []
    s = mask
    while s:
        out.append(s)
        s = (s - 1) & mask
    if not nonempty:
        out.append(0)
    return out


# -- reachability ----------------------------------------------------------


def transitive_closure(dag: Dag) -> np.ndarray:
    reach = np.zeros((dag.n, dag.n), dtype=bool)
    for u in reversed(dag.topological_order()):
        for c in dag.children(u):
            reach[u, c] = True
            reach[u] |= reach[c]
    return reach


def closure_after_insert(closure: np.ndarray, edge: Edge) -> np.ndarray:
    u, v = edge
    if u == v or closure[v, u]:
        raise CycleError(edge)
    anc = closure[:, u].copy()
    anc[u] = True
    desc = closure[v].copy()
    desc[v] = True
    return closure | np.outer(anc, desc)


def closure_after_delete(closure: np.ndarray, dag: Dag, edge: Edge) -> np.ndarray:
    """Closure of ``dag`` minus ``edge``; only rows of ancestors of the tail change."""
    u, v = edge
    if not dag.has_edge(u, v):
        raise MissingEdgeError(edge)
    out = closure.copy()
    affected = closure[:, u].copy()
    affected[u] = True
    for a in reversed(dag.topological_order()):
        if not affected[a]:
            continue
        row = np.zeros(dag.n, dtype=bool)
        for c in dag.children(a):
            if a == u and c == v:
                continue
            row[c] = True
            row |= out[c]
        out[a] = row
    return out


# -- Markov equivalence ----------------------------------------------------


def _check_sizes(n1: int, n2: int) -> None:
    if n1 != n2:
        raise SizeMismatchError(f"graphs have {n1} and {n2} nodes")


def is_markov_equivalent(g1: Dag, g2: Dag) -> bool:
    _check_sizes(g1.n, g2.n)
    return g1.skeleton() == g2.skeleton() and g1.colliders() == g2.colliders()


def covered_edges(dag: Dag) -> list[Edge]:
    return [(x, y) for x, y in dag.edges() if dag.parents(y) == dag.parents(x) | {x}]


def to_pdag(dag: Dag) -> Pdag:
    """Essential graph: v-structure arcs plus Meek rules R1-R3 to a fixpoint."""
    compelled: set[Edge] = set()
    for a, b, c in dag.colliders():
        compelled.add((a, b))
        compelled.add((c, b))
    pending = [e for e in dag.edges() if e not in compelled]

    def is_undirected(a: int, b: int) -> bool:
        return dag.adjacent(a, b) and (a, b) not in compelled and (b, a) not in compelled

    changed = True
    while changed:
        changed = False
        for x, y in pending:
            if (x, y) in compelled:
                continue
            # R1: a -> x - y with a, y non-adjacent
            r1 = any((a, x) in compelled and not dag.adjacent(a, y) for a in dag.parents(x))
            # R2: x -> w -> y with x - y
            r2 = not r1 and any(
                (x, w) in compelled and (w, y) in compelled for w in dag.children(x)
            )
            r3 = False
            if not (r1 or r2):
                # R3: x - c -> y, x - d -> y, c and d non-adjacent
                feeders = [
                    c for c in dag.parents(y) if (c, y) in compelled and is_undirected(x, c)
                ]
                r3 = any(
                    not dag.adjacent(c, d) for c, d in itertools.combinations(feeders, 2)
                )
            if r1 or r2 or r3:
                compelled.add((x, y))
                changed = True
    undirected = frozenset((min(u, v), max(u, v)) for u, v in pending if (u, v) not in compelled)
    return Pdag(dag.n, frozenset(compelled), undirected)


def shd(p1: Pdag, p2: Pdag) -> int:
    _check_sizes(p1.n, p2.n)
    return sum(
        p1.status(i, j) != p2.status(i, j)
        for i, j in itertools.combinations(range(p1.n), 2)
    )


def edge_differences(learned: Pdag, true: Pdag) -> dict[str, int]:
    """Split SHD into extra, missing and misoriented pairs (learned vs true)."""
    _check_sizes(learned.n, true.n)
    out = {"extra": 0, "missing": 0, "misoriented": 0}
    for i, j in itertools.combinations(range(learned.n), 2):
        a, b = learned.status(i, j), true.status(i, j)
        if a == b:
            continue
        if b == ABSENT:
            out["extra"] += 1
        elif a == ABSENT:
            out["missing"] += 1
        else:
            out["misoriented"] += 1
    return out


# -- enumeration and counting ----------------------------------------------


def _layered_parent_masks(n: int) -> Iterator[tuple[int, ...]]:
    """Every labeled DAG once, built layer by layer from its source layers.

    A node of layer ``i+1`` takes a non-empty parent set from layer ``i``
    plus any subset of the older layers, which makes the layer decomposition
    (repeatedly stripping sources) unique.
    """
    full = (1 << n) - 1
    parents = [0] * n

    def extend(remaining: int, prev: int, placed: int) -> Iterator[tuple[int, ...]]:
        if remaining == 0:
            yield tuple(parents)
            return
        older = placed & ~prev
        choices = [
            s | t
            for s in _submasks(prev, nonempty=True)
            for t in _submasks(older, nonempty=False)
        ]
        for layer in _submasks(remaining, nonempty=True):
            members = list(_bits(layer))
            for picks in itertools.product(choices, repeat=len(members)):
                for v, mask in zip(members, picks):
                    parents[v] = mask
                yield from extend(remaining & ~layer, layer, placed | layer)
        for v in _bits(remaining):
            parents[v] = 0

    for first in _submasks(full, nonempty=True):
        for v in _bits(first):
            parents[v] = 0
        yield from extend(full & ~first, first, first)


def enumerate_parent_masks(n: int) -> Iterator[tuple[int, ...]]:
    if n > MAX_ENUMERATION_NODES:
        raise TooLargeError(
            f"enumerating DAGs on {n} nodes is refused (limit {MAX_ENUMERATION_NODES}); "
            f"there are {count_dags(n)} of them"
        )
    if n == 0:
        yield ()
        return
    yield from _layered_parent_masks(n)


def enumerate_dags(n: int) -> Iterator[Dag]:
    for masks in enumerate_parent_masks(n):
        yield Dag.from_parent_masks(masks)


@lru_cache(maxsize=None)
def count_dags(n: int) -> int:
    """Robinson's alternating recurrence, in exact integer arithmetic."""
    if n < 0:
        raise ValueError("node count must be non-negative")
    if n == 0:
        return 1
    return sum(
        (-1) ** (k + 1) * math.comb(n, k) * 2 ** (k * (n - k)) * count_dags(n - k)
        for k in range(1, n + 1)
    )
