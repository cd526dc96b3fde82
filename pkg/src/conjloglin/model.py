"""Variable spaces, contingency tables and hierarchical log-linear models.

Tables are numpy arrays with one axis per variable in declared order, so
``table[i]`` is the count (or probability) of the full cell ``i``.  Level
0 of every variable is the base level; the base cell is all zeros.

Interaction sets are tuples of variable names in declared order.  Every
family of sets is sorted by (cardinality, variable positions), and cells
inside a set by lexicographic level order; vectors indexed by
``(set, cell)`` pairs follow that order throughout the package.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations, product
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import sparse

from .graphs import UndirectedGraph, complete_subsets


class ModelError(ValueError):
    """Raised for malformed spaces, models or tables."""


@dataclass(frozen=True)
class VariableSpace:
    variables: tuple
    levels: tuple

    def __post_init__(self):
        names = tuple(self.variables)
        levels = tuple(int(k) for k in self.levels)
        if len(names) != len(levels):
            raise ModelError("one level count per variable is required")
        if len(set(names)) != len(names):
            raise ModelError("variable names must be unique")
        if not names:
            raise ModelError("at least one variable is required")
        if any(k < 2 for k in levels):
            raise ModelError("every variable needs at least 2 levels")
        object.__setattr__(self, "variables", names)
        object.__setattr__(self, "levels", levels)

    @classmethod
    def binary(cls, names: Iterable[str]) -> "VariableSpace":
        names = tuple(names)
        return cls(names, (2,) * len(names))

    @cached_property
    def _pos(self) -> dict:
        return {v: k for k, v in enumerate(self.variables)}

    @property
    def shape(self) -> tuple:
        return self.levels

    @property
    def size(self) -> int:
        return int(np.prod(self.levels))

    @property
    def base_cell(self) -> tuple:
        return (0,) * len(self.variables)

    def level_count(self, name: str) -> int:
        return self.levels[self.axis(name)]

    def axis(self, name: str) -> int:
        try:
            return self._pos[name]
        except KeyError:
            raise ModelError(f"unknown variable {name!r}") from None

    def canonical(self, subset: Iterable[str]) -> tuple:
        """``subset`` as a tuple in declared variable order."""
        names = set(subset)
        for v in names:
            self.axis(v)
        return tuple(sorted(names, key=self._pos.__getitem__))

    def sort_key(self, subset: Sequence[str]):
        return (len(subset), tuple(self._pos[v] for v in subset))

    def nonempty_subsets(self) -> list:
        out = [c for r in range(1, len(self.variables) + 1) for c in combinations(self.variables, r)]
        out.sort(key=self.sort_key)
        return out


def marginal_star_cells(space: VariableSpace, subset: Iterable[str]) -> list:
    """Cells of the ``subset`` margin whose levels are all nonzero."""
    scope = space.canonical(subset)
    if not scope:
        raise ModelError("subset must be nonempty")
    return list(product(*(range(1, space.level_count(v)) for v in scope)))


def marginalize(table, space: VariableSpace, subset: Iterable[str]) -> np.ndarray:
    """Sum ``table`` over every axis outside ``subset``.

    The result keeps the remaining axes in declared order.
    """
    arr = table.counts if isinstance(table, ContingencyTable) else np.asarray(table, dtype=float)
    scope = space.canonical(subset)
    drop = tuple(k for k, v in enumerate(space.variables) if v not in scope)
    return arr.sum(axis=drop) if drop else arr.copy()


@dataclass(frozen=True)
class ContingencyTable:
    space: VariableSpace
    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=float)
        if counts.shape != self.space.shape:
            raise ModelError(f"table shape {counts.shape} does not match space {self.space.shape}")
        if not np.all(np.isfinite(counts)) or np.any(counts < 0):
            raise ModelError("counts must be finite and nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def marginal(self, subset: Iterable[str]) -> np.ndarray:
        return marginalize(self.counts, self.space, subset)

    @classmethod
    def from_cells(cls, space: VariableSpace, cells: dict) -> "ContingencyTable":
        counts = np.zeros(space.shape)
        for cell, n in cells.items():
            counts[tuple(cell)] += n
        return cls(space, counts)


SATURATED = "saturated"
GRAPHICAL = "graphical"
HIERARCHICAL = "hierarchical"


def _downward_closure(space: VariableSpace, generators) -> list:
    family = set()
    for g in generators:
        g = space.canonical(g)
        if not g:
            raise ModelError("generators must be nonempty")
        for r in range(1, len(g) + 1):
            family.update(combinations(g, r))
    return sorted(family, key=space.sort_key)


@dataclass(frozen=True, eq=False)
class Model:
    """A hierarchical log-linear model on ``space``.

    ``interactions`` is the downward-closed family of nonempty sets whose
    interaction terms are free.  ``graph`` is the dependence graph when the
    family is graphical (complete subsets of the graph).
    """

    space: VariableSpace
    interactions: tuple
    graph: Optional[UndirectedGraph] = None
    kind: str = HIERARCHICAL

    def __post_init__(self):
        family = [self.space.canonical(d) for d in self.interactions]
        if any(not d for d in family):
            raise ModelError("interaction sets must be nonempty")
        fam = set(family)
        for d in fam:
            for r in range(1, len(d)):
                for sub in combinations(d, r):
                    if sub not in fam:
                        raise ModelError(f"interaction family is not downward closed: {sub} missing")
        object.__setattr__(self, "interactions", tuple(sorted(fam, key=self.space.sort_key)))

    # construction -------------------------------------------------------

    @classmethod
    def from_family(cls, space: VariableSpace, family) -> "Model":
        """Build a model and detect whether it is saturated or graphical."""
        family = _downward_closure(space, family) if family else []
        graph = dependence_graph(space, family)
        if len(family) == 2 ** len(space.variables) - 1:
            kind = SATURATED
        elif set(family) == set(complete_subsets(graph)):
            kind = GRAPHICAL
        else:
            kind = HIERARCHICAL
        return cls(space, tuple(family), graph if kind != HIERARCHICAL else None, kind)

    @classmethod
    def saturated(cls, space: VariableSpace) -> "Model":
        return cls.from_family(space, [space.variables])

    @classmethod
    def graphical(cls, space: VariableSpace, graph: UndirectedGraph) -> "Model":
        if set(graph.vertices) != set(space.variables):
            raise ModelError("graph vertices must be exactly the variables")
        g = UndirectedGraph(space.canonical(graph.vertices), graph.edges)
        return cls.from_family(space, complete_subsets(g))

    # derived structure --------------------------------------------------

    @property
    def is_graphical(self) -> bool:
        return self.kind in (SATURATED, GRAPHICAL)

    @cached_property
    def dependence_graph(self) -> UndirectedGraph:
        return self.graph if self.graph is not None else dependence_graph(self.space, self.interactions)

    @cached_property
    def maximal_sets(self) -> tuple:
        fam = self.interactions
        return tuple(d for d in fam if not any(set(d) < set(e) for e in fam))

    @cached_property
    def index(self) -> tuple:
        """Canonical ``(set, cell)`` labels of the free parameters."""
        return tuple((d, c) for d in self.interactions for c in marginal_star_cells(self.space, d))

    @property
    def dim(self) -> int:
        return len(self.index)

    @cached_property
    def position(self) -> dict:
        return {lab: k for k, lab in enumerate(self.index)}

    @cached_property
    def blocks(self) -> dict:
        """Slice of the parameter vector occupied by each interaction set."""
        out, start = {}, 0
        for d in self.interactions:
            n = len(marginal_star_cells(self.space, d))
            out[d] = slice(start, start + n)
            start += n
        return out

    @cached_property
    def label_cells(self) -> np.ndarray:
        """Flat table index of the cell (i_D, 0) for every parameter label."""
        space = self.space
        out = np.empty(self.dim, dtype=np.intp)
        for k, (d, cell) in enumerate(self.index):
            full = [0] * len(space.variables)
            for v, lvl in zip(d, cell):
                full[space.axis(v)] = lvl
            out[k] = np.ravel_multi_index(tuple(full), space.shape)
        return out

    @cached_property
    def design(self) -> sparse.csr_matrix:
        """Indicator matrix X with X[j, k] = 1 iff cell j restricts to label k.

        Rows follow the C-order flattening of the table.
        """
        space = self.space
        flat = np.arange(space.size).reshape(space.shape)
        rows, cols = [], []
        for k, (d, cell) in enumerate(self.index):
            sel = [slice(None)] * len(space.variables)
            for v, lvl in zip(d, cell):
                sel[space.axis(v)] = lvl
            r = flat[tuple(sel)].ravel()
            rows.append(r)
            cols.append(np.full(r.size, k))
        if rows:
            rows, cols = np.concatenate(rows), np.concatenate(cols)
        data = np.ones(len(rows))
        return sparse.csr_matrix((data, (rows, cols)), shape=(space.size, self.dim))

    def submodel(self, subset: Iterable[str]) -> "Model":
        """The marginal model on ``subset`` with the restricted family."""
        scope = self.space.canonical(subset)
        space = VariableSpace(scope, tuple(self.space.level_count(v) for v in scope))
        fam = [d for d in self.interactions if set(d) <= set(scope)]
        if not fam:
            raise ModelError("submodel has no interaction sets")
        return Model.from_family(space, fam)

    def restrict(self, values: np.ndarray, sub: "Model") -> np.ndarray:
        """Pick the entries of a full-model vector that belong to ``sub``."""
        return np.array([values[self.position[lab]] for lab in sub.index])

    # identity -----------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "variables": [{"name": v, "levels": k} for v, k in zip(self.space.variables, self.space.levels)],
            "interactions": [list(d) for d in self.interactions],
        }

    @cached_property
    def hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def __eq__(self, other):
        return isinstance(other, Model) and self.hash == other.hash

    def __hash__(self):
        return hash(self.hash)

    def label(self, k: int) -> str:
        d, cell = self.index[k]
        return format_label(self.space, d, cell)


def format_label(space: VariableSpace, subset: Sequence[str], cell: Sequence[int]) -> str:
    """Readable label: ``ab`` for binary sets, ``ab(1,2)`` otherwise."""
    if not subset:
        return "empty"
    name = "".join(subset) if all(len(v) == 1 for v in subset) else ":".join(subset)
    if all(space.level_count(v) == 2 for v in subset):
        return name
    return f"{name}({','.join(str(c) for c in cell)})"


def dependence_graph(space: VariableSpace, family) -> UndirectedGraph:
    edges = {frozenset(d) for d in family if len(d) == 2}
    edges |= {frozenset(p) for d in family if len(d) > 2 for p in combinations(d, 2)}
    return UndirectedGraph(space.variables, frozenset(edges))


def hierarchical_closure(space: VariableSpace, generators) -> Model:
    """Model generated by ``generators``: all nonempty subsets of each."""
    generators = list(generators)
    if not generators:
        raise ModelError("at least one generator is required")
    return Model.from_family(space, generators)
