"""The conjugate prior expressed on the free cell probabilities.

Changing variables from theta to the free probabilities p(i_D, 0) turns
the prior into a Dirichlet-like kernel in those probabilities times the
inverse of a correction factor ``K``.  ``K`` is built from the column sums
of the signed incidence matrix between interaction sets and all nonempty
variable sets.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .graphs import UndirectedGraph, induced_is_connected, induced_is_decomposable
from .model import Model, ModelError, marginal_star_cells
from .param import FreeProbVector, ParametrizationError, complete_cells
from .prior import Hyperparameters

log = logging.getLogger(__name__)

MAX_VARIABLES = 20
EMPTY = ((), ())


class DegenerateJacobianError(ValueError):
    """Raised where the correction factor K is not positive."""


@dataclass(frozen=True)
class FMatrix:
    """Sparse signed incidence matrix; column 0 is the empty set."""

    rows: tuple
    cols: tuple
    entries: tuple  # (row, col, sign) triples

    def dense(self) -> np.ndarray:
        out = np.zeros((len(self.rows), len(self.cols)), dtype=int)
        for r, c, v in self.entries:
            out[r, c] = v
        return out

    def column_sums(self) -> np.ndarray:
        out = np.zeros(len(self.cols), dtype=int)
        for _, c, v in self.entries:
            out[c] += v
        return out


def _check_size(model: Model):
    if len(model.space.variables) > MAX_VARIABLES:
        raise ModelError(f"subset-lattice computations are capped at {MAX_VARIABLES} variables")


def build_f_matrix(model: Model) -> FMatrix:
    _check_size(model)
    space = model.space
    rows = model.index
    cols = [EMPTY] + [(h, c) for h in space.nonempty_subsets() for c in marginal_star_cells(space, h)]
    entries = []
    for ci, (h, cell) in enumerate(cols):
        if not h:
            continue
        at = dict(zip(h, cell))
        for c in model.interactions:
            if set(c) <= set(h):
                r = model.position[(c, tuple(at[v] for v in c))]
                entries.append((r, ci, (-1) ** (len(c) - 1)))
    entries.sort()
    return FMatrix(tuple(rows), tuple(cols), tuple(entries))


def column_sum(model: Model, subset) -> int:
    """Sum of the F column of any cell of ``subset`` (the same for all its cells)."""
    h = set(subset)
    return sum((-1) ** (len(c) - 1) for c in model.interactions if set(c) <= h)


def _graph_of(model: Model, graph):
    if graph is not None:
        return graph
    if not model.is_graphical:
        raise ModelError("graph predicates need a graphical model")
    return model.dependence_graph


def u_family(model: Model, graph: UndirectedGraph = None, include_empty: bool = False) -> list:
    """Sets that induce a non-decomposable or disconnected subgraph, with their cells."""
    _check_size(model)
    graph = _graph_of(model, graph)
    out = [EMPTY] if include_empty else []
    for h in model.space.nonempty_subsets():
        if not (induced_is_connected(graph, h) and induced_is_decomposable(graph, h)):
            out.extend((h, c) for c in marginal_star_cells(model.space, h))
    return out


def coefficient_a(model: Model, graph: UndirectedGraph = None) -> dict:
    """``a(j_H)`` = F column sum minus one, for the empty set and every cell of every set.

    Sets that induce a decomposable connected subgraph get 0 from the graph
    predicates; the column sum is computed for every set as a cross-check
    and disagreements are reported through :func:`a_disagreements`.
    """
    _check_size(model)
    graph = _graph_of(model, graph)
    out = {EMPTY: -1}
    for h in model.space.nonempty_subsets():
        colsum = column_sum(model, h)
        nice = induced_is_connected(graph, h) and induced_is_decomposable(graph, h)
        value = 0 if nice else colsum - 1
        if nice and colsum != 1:
            warnings.warn(f"F column sum of {h} is {colsum} but the set is decomposable and connected")
            value = colsum - 1
        for c in marginal_star_cells(model.space, h):
            out[(h, c)] = value
    return out


def a_disagreements(model: Model, graph: UndirectedGraph = None) -> list:
    """Sets where 'column sum == 1' and 'decomposable and connected' disagree."""
    graph = _graph_of(model, graph)
    bad = []
    for h in model.space.nonempty_subsets():
        nice = induced_is_connected(graph, h) and induced_is_decomposable(graph, h)
        if nice != (column_sum(model, h) == 1):
            bad.append(h)
    return bad


@dataclass(frozen=True)
class JacobianFactor:
    """``|dp/dtheta| = p_empty * prod(p_D) * K``."""

    determinant: float
    log_abs_determinant: float
    K: float


def _support_codes(model: Model) -> np.ndarray:
    space = model.space
    grids = np.indices(space.shape)
    code = np.zeros(space.shape, dtype=np.int64)
    for k in range(len(space.variables)):
        code |= (grids[k] != 0).astype(np.int64) << k
    return code


def _column_sum_by_support(model: Model) -> np.ndarray:
    """Zeta transform: entry at bitmask H is the F column sum of H."""
    n = len(model.space.variables)
    f = np.zeros(1 << n, dtype=np.int64)
    for c in model.interactions:
        mask = sum(1 << model.space.axis(v) for v in c)
        f[mask] = (-1) ** (len(c) - 1)
    for k in range(n):
        bit = 1 << k
        idx = np.arange(1 << n)
        has = (idx & bit) != 0
        f[has] += f[idx[has] ^ bit]
    return f


def _checked_table(free: FreeProbVector) -> np.ndarray:
    if free.p_empty <= 0 or np.any(free.values <= 0):
        raise ParametrizationError("free probabilities must be strictly positive")
    return complete_cells(free).probs


def _factor(free: FreeProbVector, K: float) -> JacobianFactor:
    log_base = np.log(free.p_empty) + np.sum(np.log(free.values))
    det = float(np.exp(log_base) * K)
    return JacobianFactor(det, float(log_base + np.log(abs(K))) if K != 0 else -np.inf, float(K))


def jacobian_factor_graphical(free: FreeProbVector, graph: UndirectedGraph = None) -> JacobianFactor:
    """``K = 1 - (1/p_empty) * sum over U of a(j_H) p(j_H, 0)``."""
    model = free.model
    probs = _checked_table(free)
    a = coefficient_a(model, graph)
    space = model.space
    acc = 0.0
    for (h, cell), coef in a.items():
        if not h or coef == 0:
            continue
        full = [0] * len(space.variables)
        for v, lvl in zip(h, cell):
            full[space.axis(v)] = lvl
        acc += coef * probs[tuple(full)]
    return _factor(free, 1.0 - acc / free.p_empty)


def jacobian_factor_hierarchical(free: FreeProbVector) -> JacobianFactor:
    """``K`` for any hierarchical family from the F column sums of every set.

    ``p_empty * K = 1 - sum_H sum_{j_H} colsum(H) p(j_H, 0)``.
    """
    model = free.model
    _check_size(model)
    probs = _checked_table(free)
    colsum = _column_sum_by_support(model)[_support_codes(model)]
    numerator = 1.0 - float(np.sum(colsum * probs))
    return _factor(free, numerator / free.p_empty)


def jacobian_factor(free: FreeProbVector) -> JacobianFactor:
    if free.model.is_graphical:
        return jacobian_factor_graphical(free)
    return jacobian_factor_hierarchical(free)


@dataclass(frozen=True, eq=False)
class InducedExponents:
    model: Model
    alpha_cell: np.ndarray
    alpha_empty: float
    u_family: tuple = field(default=())

    def __getitem__(self, label):
        d, cell = label
        return self.alpha_cell[self.model.position[(self.model.space.canonical(d), tuple(cell))]]


def upper_alternating_sums(model: Model, s: np.ndarray) -> tuple:
    """Alternating sums of ``s`` over supersets; returns (per-label, base-cell)."""
    table = np.zeros(model.space.shape)
    table.flat[model.label_cells] = s
    for ax in range(table.ndim):
        idx = [slice(None)] * table.ndim
        idx[ax] = slice(1, None)
        upper = table[tuple(idx)].sum(axis=ax, keepdims=True)
        idx[ax] = slice(0, 1)
        table[tuple(idx)] -= upper
    return table.flat[model.label_cells].copy(), float(table.flat[0])


def induced_exponents(hyper: Hyperparameters) -> InducedExponents:
    """Exponents of p(i_D, 0) and p_empty in the induced kernel."""
    model = hyper.model
    cell, base = upper_alternating_sums(model, hyper.s)
    u = tuple(u_family(model)) if model.is_graphical and len(model.space.variables) <= MAX_VARIABLES else ()
    return InducedExponents(model, cell, hyper.alpha + base, u)


def hyper_from_exponents(model: Model, alpha_cell: np.ndarray, alpha_empty: float) -> Hyperparameters:
    """Inverse of :func:`induced_exponents`: sum exponents over supersets."""
    table = np.zeros(model.space.shape)
    table.flat[model.label_cells] = alpha_cell
    for ax in range(table.ndim):
        idx = [slice(None)] * table.ndim
        idx[ax] = slice(1, None)
        upper = table[tuple(idx)].sum(axis=ax, keepdims=True)
        idx[ax] = slice(0, 1)
        table[tuple(idx)] += upper
    s = table.flat[model.label_cells].copy()
    return Hyperparameters(model, s, float(alpha_empty + np.sum(alpha_cell)))


def induced_log_density(free: FreeProbVector, hyper: Hyperparameters) -> float:
    """Log of the induced kernel, without the normalizing constant.

    Raises :class:`DegenerateJacobianError` where ``K <= 0``.
    """
    if free.model != hyper.model:
        raise ModelError("probabilities and hyperparameters belong to different models")
    jac = jacobian_factor(free)
    if not jac.K > 0:
        raise DegenerateJacobianError(f"correction factor K = {jac.K:.6g} is not positive here")
    ex = induced_exponents(hyper)
    return float(np.sum((ex.alpha_cell - 1.0) * np.log(free.values))
                 + (ex.alpha_empty - 1.0) * np.log(free.p_empty) - np.log(jac.K))

