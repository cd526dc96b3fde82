"""Undirected graphs and the predicates the log-linear machinery needs.

Vertices are variable names; every routine that returns subsets returns
tuples ordered by the graph's own vertex order, and families of subsets
are sorted by (cardinality, position) so results are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Optional, Sequence


@dataclass(frozen=True)
class UndirectedGraph:
    vertices: tuple
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        verts = tuple(self.vertices)
        if len(set(verts)) != len(verts):
            raise ValueError("duplicate vertex names")
        clean = set()
        for e in self.edges:
            pair = frozenset(e)
            if len(pair) != 2:
                raise ValueError(f"self-loop or malformed edge: {tuple(e)!r}")
            if not pair <= set(verts):
                raise ValueError(f"edge {tuple(e)!r} references an undeclared vertex")
            clean.add(pair)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "edges", frozenset(clean))
        adj = {v: set() for v in verts}
        for u, v in (tuple(e) for e in clean):
            adj[u].add(v)
            adj[v].add(u)
        object.__setattr__(self, "_adj", {v: frozenset(n) for v, n in adj.items()})
        object.__setattr__(self, "_pos", {v: k for k, v in enumerate(verts)})

    @classmethod
    def from_edges(cls, vertices: Iterable, edges: Iterable[Sequence]) -> "UndirectedGraph":
        return cls(tuple(vertices), frozenset(frozenset(e) for e in edges))

    @classmethod
    def complete(cls, vertices: Iterable) -> "UndirectedGraph":
        verts = tuple(vertices)
        return cls(verts, frozenset(frozenset(p) for p in combinations(verts, 2)))

    def neighbors(self, v) -> frozenset:
        return self._adj[v]

    def adjacent(self, u, v) -> bool:
        return v in self._adj[u]

    def order(self, subset: Iterable) -> tuple:
        """Return ``subset`` as a tuple in vertex order."""
        return tuple(sorted(set(subset), key=self._pos.__getitem__))

    def sort_key(self, subset: Sequence):
        return (len(subset), tuple(self._pos[v] for v in subset))

    def induced(self, subset: Iterable) -> "UndirectedGraph":
        verts = self.order(subset)
        keep = set(verts)
        return UndirectedGraph(verts, frozenset(e for e in self.edges if e <= keep))

    def is_complete(self, subset: Iterable) -> bool:
        s = list(subset)
        return all(self.adjacent(u, v) for u, v in combinations(s, 2))

    def connected_components(self, subset: Optional[Iterable] = None) -> list:
        """Components of the subgraph induced on ``subset`` (default: all)."""
        todo = set(self.vertices if subset is None else subset)
        comps = []
        for start in self.order(todo):
            if start not in todo:
                continue
            todo.discard(start)
            comp, stack = {start}, [start]
            while stack:
                for w in self._adj[stack.pop()]:
                    if w in todo:
                        todo.discard(w)
                        comp.add(w)
                        stack.append(w)
            comps.append(self.order(comp))
        return comps


@dataclass(frozen=True)
class PrimeDecomposition:
    """Perfectly enumerated prime components and their separators.

    ``separators[l]`` is the separator of ``components[l + 1]``.
    """

    components: tuple
    separators: tuple

    def __len__(self):
        return len(self.components)


def complete_subsets(graph: UndirectedGraph) -> list:
    """All nonempty complete vertex subsets, canonically ordered."""
    out = []
    pos = graph._pos

    def extend(clique, candidates):
        for k, v in enumerate(candidates):
            new = clique + (v,)
            out.append(new)
            extend(new, [w for w in candidates[k + 1:] if graph.adjacent(v, w)])

    extend((), list(graph.vertices))
    out.sort(key=lambda s: (len(s), tuple(pos[v] for v in s)))
    return out


def max_cliques(graph: UndirectedGraph) -> list:
    """Maximal cliques via Bron-Kerbosch with pivoting, canonically ordered."""
    found = []

    def bk(r, p, x):
        if not p and not x:
            found.append(graph.order(r))
            return
        pivot = max(p | x, key=lambda u: len(graph.neighbors(u) & p))
        for v in list(p - graph.neighbors(pivot)):
            bk(r | {v}, p & graph.neighbors(v), x & graph.neighbors(v))
            p = p - {v}
            x = x | {v}

    if graph.vertices:
        bk(set(), set(graph.vertices), set())
    found.sort(key=graph.sort_key)
    return found


def maximum_cardinality_search(graph: UndirectedGraph) -> list:
    """Vertex numbering by maximum cardinality search (ties: vertex order)."""
    weight = {v: 0 for v in graph.vertices}
    numbered = []
    remaining = list(graph.vertices)
    while remaining:
        v = max(remaining, key=lambda u: (weight[u], -graph._pos[u]))
        remaining.remove(v)
        numbered.append(v)
        for w in graph.neighbors(v):
            if w in weight and w in remaining:
                weight[w] += 1
    return numbered


def perfect_ordering(graph: UndirectedGraph):
    """Cliques and separators in a perfect ordering, or ``None``.

    Returns ``(cliques, separators)`` where ``separators[l]`` belongs to
    ``cliques[l + 1]``.  ``None`` means the graph is not decomposable.
    """
    order = maximum_cardinality_search(graph)
    rank = {v: k for k, v in enumerate(order)}
    candidates = []
    for v in order:
        earlier = {w for w in graph.neighbors(v) if rank[w] < rank[v]}
        if not graph.is_complete(earlier):
            return None
        candidates.append(frozenset(earlier | {v}))
    cliques = []
    for k, c in enumerate(candidates):
        if any(c < other for other in candidates[k + 1:]):
            continue
        if c in cliques:
            continue
        cliques.append(c)
    separators = []
    seen = set(cliques[0]) if cliques else set()
    for k in range(1, len(cliques)):
        sep = cliques[k] & seen
        if not any(sep <= cliques[j] for j in range(k)):
            return None
        separators.append(graph.order(sep))
        seen |= cliques[k]
    return [graph.order(c) for c in cliques], separators


def is_decomposable(graph: UndirectedGraph) -> bool:
    return perfect_ordering(graph) is not None


def induced_is_connected(graph: UndirectedGraph, subset: Iterable) -> bool:
    subset = list(subset)
    return len(subset) > 0 and len(graph.connected_components(subset)) == 1


def induced_is_decomposable(graph: UndirectedGraph, subset: Iterable) -> bool:
    return is_decomposable(graph.induced(subset))


def _complete_separator(graph: UndirectedGraph, verts: tuple):
    """First complete subset of ``verts`` whose removal disconnects G[verts]."""
    sub = graph.induced(verts)
    if len(sub.connected_components()) > 1:
        return ()
    for s in complete_subsets(sub):
        if len(s) >= len(verts) - 1:
            break
        rest = set(verts) - set(s)
        if len(sub.connected_components(rest)) > 1:
            return s
    return None


def _atoms(graph: UndirectedGraph, verts: tuple) -> list:
    sep = _complete_separator(graph, verts)
    if sep is None:
        return [verts]
    rest = set(verts) - set(sep)
    comp = set(graph.connected_components(rest)[0])
    boundary = {w for v in comp for w in graph.neighbors(v) if w in set(verts) - comp}
    return _atoms(graph, graph.order(comp | boundary)) + _atoms(graph, graph.order(set(verts) - comp))


def is_prime(graph: UndirectedGraph, subset: Optional[Iterable] = None) -> bool:
    """True when the induced subgraph has no complete separator."""
    verts = graph.order(graph.vertices if subset is None else subset)
    return _complete_separator(graph, verts) is None


def prime_components(graph: UndirectedGraph) -> PrimeDecomposition:
    """Decompose by complete separators into maximal prime subgraphs.

    Connected components are decomposed independently and concatenated,
    so a disconnected graph yields empty separators between them.
    """
    components, separators = [], []
    for comp in graph.connected_components():
        leaves = _atoms(graph, comp)
        atoms = []
        for a in sorted(set(leaves), key=lambda s: -len(s)):
            if not any(set(a) <= set(b) for b in atoms):
                atoms.append(a)
        filled = UndirectedGraph.from_edges(
            comp, {frozenset(p) for a in atoms for p in combinations(a, 2)}
        )
        ordering = perfect_ordering(filled)
        if ordering is None or {frozenset(c) for c in ordering[0]} != {frozenset(a) for a in atoms}:
            raise RuntimeError("prime components do not admit a perfect enumeration")
        cliques, seps = ordering
        if components:
            separators.append(())
        components.extend(cliques)
        separators.extend(seps)
    return PrimeDecomposition(tuple(components), tuple(separators))
