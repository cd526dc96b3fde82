"""Closed forms for decomposable graphs and the prime-component factorization.

For a decomposable graph the conjugate prior is a hyper Dirichlet on the
clique and separator margins.  Its block exponents come from restricting
``s`` to a clique (or separator) and taking the induced exponents of the
saturated model there, so every block total equals ``alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .graphs import PrimeDecomposition, perfect_ordering, prime_components
from .induced import InducedExponents, induced_exponents
from .model import Model, ModelError, marginalize
from .param import ThetaVector, full_from_theta, theta_from_full
from .prior import Hyperparameters, ImproperPriorError, log_prior_unnorm

CONSISTENCY_TOL = 1e-9


class NotDecomposableError(ModelError):
    pass


@dataclass(frozen=True)
class Block:
    vertices: tuple
    exponents: Optional[InducedExponents]  # None for an empty separator
    alpha: float

    @property
    def values(self) -> np.ndarray:
        if self.exponents is None:
            return np.array([self.alpha])
        return np.concatenate([[self.exponents.alpha_empty], self.exponents.alpha_cell])

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def log_normalizer(self) -> float:
        """log of prod Gamma(exponents) / Gamma(alpha)."""
        return float(np.sum(gammaln(self.values)) - gammaln(self.alpha))


@dataclass(frozen=True)
class CliqueSeparatorAlphas:
    cliques: tuple
    separators: tuple

    def blocks(self):
        yield from ((+1, b) for b in self.cliques)
        yield from ((-1, b) for b in self.separators)


def decomposition_of(model: Model, decomposition=None):
    """``(cliques, separators)`` for a decomposable graphical model."""
    if decomposition is not None:
        if isinstance(decomposition, PrimeDecomposition):
            return list(decomposition.components), list(decomposition.separators)
        cliques, seps = decomposition
        return list(cliques), list(seps)
    if not model.is_graphical:
        raise NotDecomposableError("closed forms need a graphical model")
    ordering = perfect_ordering(model.dependence_graph)
    if ordering is None:
        raise NotDecomposableError("graph is not decomposable")
    return ordering


def _block(model: Model, hyper: Hyperparameters, vertices) -> Block:
    vertices = model.space.canonical(vertices)
    if not vertices:
        return Block((), None, hyper.alpha)
    sub = model.submodel(vertices)
    if sub.kind != "saturated":
        raise NotDecomposableError(f"{vertices} is not complete in the model")
    return Block(vertices, induced_exponents(hyper.restrict(sub)), hyper.alpha)


def clique_sep_alphas(hyper: Hyperparameters, decomposition=None) -> CliqueSeparatorAlphas:
    """Hyper Dirichlet exponents of every clique and separator block."""
    cliques, seps = decomposition_of(hyper.model, decomposition)
    return CliqueSeparatorAlphas(
        tuple(_block(hyper.model, hyper, c) for c in cliques),
        tuple(_block(hyper.model, hyper, s) for s in seps),
    )


def log_i_decomposable(hyper: Hyperparameters, decomposition=None) -> float:
    """Exact log normalizing constant of the prior for a decomposable graph."""
    alphas = clique_sep_alphas(hyper, decomposition)
    total = 0.0
    for sign, block in alphas.blocks():
        if np.any(block.values <= 0):
            raise ImproperPriorError(f"nonpositive hyper Dirichlet exponent in block {block.vertices}")
        total += sign * block.log_normalizer()
    return total


@dataclass(frozen=True)
class CliqueSeparatorProbs:
    """Marginal tables, one per clique and separator, axes in declared order."""

    cliques: tuple  # (vertices, table) pairs
    separators: tuple


def clique_separator_probs(probs, model: Model, decomposition=None) -> CliqueSeparatorProbs:
    arr = getattr(probs, "probs", probs)
    cliques, seps = decomposition_of(model, decomposition)
    space = model.space
    return CliqueSeparatorProbs(
        tuple((tuple(c), marginalize(arr, space, c)) for c in cliques),
        tuple((tuple(s), marginalize(arr, space, s) if s else np.array(1.0)) for s in seps),
    )


def _check_consistent(csp: CliqueSeparatorProbs, model: Model):
    for sv, stab in csp.separators:
        if not sv:
            continue
        for cv, ctab in csp.cliques:
            if set(sv) <= set(cv):
                drop = tuple(k for k, v in enumerate(cv) if v not in sv)
                marg = ctab.sum(axis=drop) if drop else ctab
                if np.max(np.abs(marg - stab)) > CONSISTENCY_TOL:
                    raise ModelError(f"separator {sv} disagrees with the margin of clique {cv}")


def _dirichlet_log_density(table: np.ndarray, block: Block, model: Model) -> float:
    if block.exponents is None:
        return 0.0
    sub = block.exponents.model
    p = np.asarray(table, dtype=float)
    if np.any(p <= 0):
        raise ModelError("marginal probabilities must be strictly positive")
    exps = np.empty(p.size)
    exps[0] = block.exponents.alpha_empty
    exps[sub.label_cells] = block.exponents.alpha_cell
    # a clique is saturated, so every non-base cell is labelled
    return float(gammaln(block.alpha) - np.sum(gammaln(exps)) + np.sum((exps - 1.0) * np.log(p.reshape(-1))))


def hyper_dirichlet_log_density(csp: CliqueSeparatorProbs, alphas: CliqueSeparatorAlphas,
                                model: Optional[Model] = None) -> float:
    """Product of clique Dirichlet densities over separator Dirichlet densities."""
    if len(csp.cliques) != len(alphas.cliques) or len(csp.separators) != len(alphas.separators):
        raise ModelError("probability and exponent blocks do not line up")
    _check_consistent(csp, model)
    total = 0.0
    for (verts, table), block in zip(csp.cliques, alphas.cliques):
        if tuple(verts) != block.vertices:
            raise ModelError("probability and exponent blocks do not line up")
        total += _dirichlet_log_density(table, block, model)
    for (verts, table), block in zip(csp.separators, alphas.separators):
        if tuple(verts) != block.vertices:
            raise ModelError("probability and exponent blocks do not line up")
        total -= _dirichlet_log_density(table, block, model)
    return total


def decomposable_log_jacobian(csp: CliqueSeparatorProbs) -> float:
    """``log |d p^G / d theta|``: all clique-margin cells over all separator-margin cells."""
    total = sum(float(np.sum(np.log(t))) for _, t in csp.cliques)
    total -= sum(float(np.sum(np.log(t))) for v, t in csp.separators if v)
    return total


def free_margin_coordinates(csp: CliqueSeparatorProbs, model: Model) -> np.ndarray:
    """The free clique/separator marginal probabilities, one per parameter label.

    A set inside some separator takes its value from the first separator
    containing it; any other set from the unique clique containing it.
    """
    out = np.empty(model.dim)
    for k, (d, cell) in enumerate(model.index):
        source = next(((v, t) for v, t in csp.separators if v and set(d) <= set(v)), None)
        if source is None:
            source = next((v, t) for v, t in csp.cliques if set(d) <= set(v))
        verts, table = source
        at = dict(zip(d, cell))
        out[k] = table[tuple(at.get(v, 0) for v in verts)]
    return out


def component_terms(model: Model, decomposition: Optional[PrimeDecomposition] = None) -> list:
    """Signed marginal models of the prime components (+1) and separators (-1)."""
    if not model.is_graphical:
        raise ModelError("the prime-component factorization needs a graphical model")
    dec = decomposition or prime_components(model.dependence_graph)
    terms = [(+1, model.submodel(p)) for p in dec.components]
    terms += [(-1, model.submodel(s)) for s in dec.separators if s]
    return terms


def markov_ratio_log_prior(theta: ThetaVector, hyper: Hyperparameters,
                           decomposition: Optional[PrimeDecomposition] = None,
                           component_log_i: Optional[dict] = None, policy=None) -> float:
    """Normalized log prior assembled from prime components and separators.

    ``component_log_i`` maps a marginal model's hash to its log normalizing
    constant; missing entries are computed with :func:`estimate.log_i`.
    """
    from .estimate import log_i

    model = hyper.model
    probs = full_from_theta(theta).probs
    cache = dict(component_log_i or {})
    total = 0.0
    for sign, sub in component_terms(model, decomposition):
        sub_hyper = hyper.restrict(sub)
        if sub.hash not in cache:
            cache[sub.hash] = log_i(sub, sub_hyper, policy).log_i
        sub_theta = theta_from_full(marginalize(probs, model.space, sub.space.variables), sub)
        total += sign * (log_prior_unnorm(sub_theta, sub_hyper) - cache[sub.hash])
    return total
