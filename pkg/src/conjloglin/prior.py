"""Conjugate prior on the log-linear parameters.

The prior density is proportional to ``exp(<s, theta> - alpha * k(theta))``
where ``k`` is the per-observation log-partition.  It is proper exactly when
``alpha > 0`` and ``s / alpha`` is the vector of labelled-cell marginals of
some strictly positive table of the model; that is decided here by
maximizing the strictly concave dual ``<s/alpha, theta> - k(theta)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import ContingencyTable, Model, ModelError, marginalize
from .param import (
    FullProbTable,
    ThetaVector,
    full_from_theta,
    log_partition,
    mean_and_covariance,
    mean_map,
    sufficient_statistics,
)

log = logging.getLogger(__name__)

GRADIENT_TOL = 1e-8
MAX_NEWTON_ITER = 500
DIVERGENCE_BOUND = 1e3
# a witness with a cell this small is indistinguishable from a boundary point
BOUNDARY_TOL = 1e-7
IPF_TOL = 1e-10
IPF_MAX_SWEEPS = 10_000


class ImproperPriorError(ValueError):
    """Raised when hyperparameters fall outside the properness region."""


@dataclass(frozen=True, eq=False)
class Hyperparameters:
    model: Model
    s: np.ndarray
    alpha: float

    def __post_init__(self):
        s = np.array(self.s, dtype=float).reshape(-1)
        if s.size != self.model.dim:
            raise ModelError(f"expected {self.model.dim} hyperparameters, got {s.size}")
        s.setflags(write=False)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "alpha", float(self.alpha))

    def __getitem__(self, label):
        d, cell = label
        return self.s[self.model.position[(self.model.space.canonical(d), tuple(cell))]]

    def restrict(self, sub: Model) -> "Hyperparameters":
        """Hyperparameters of a marginal model: the restriction of ``s``."""
        return Hyperparameters(sub, self.model.restrict(self.s, sub), self.alpha)

    def shifted(self, label, amount: float = 1.0) -> "Hyperparameters":
        s = self.s.copy()
        d, cell = label
        s[self.model.position[(self.model.space.canonical(d), tuple(cell))]] += amount
        return Hyperparameters(self.model, s, self.alpha)


@dataclass(frozen=True, eq=False)
class PropernessReport:
    proper: bool
    witness: Optional[FullProbTable]
    residual: float
    theta: Optional[ThetaVector] = None
    iterations: int = 0
    reason: str = ""


def log_prior_unnorm(theta: ThetaVector, hyper: Hyperparameters) -> float:
    """``<s, theta> - alpha * k(theta)``; the normalizing constant is omitted."""
    if theta.model != hyper.model:
        raise ModelError("theta and hyperparameters belong to different models")
    return float(hyper.s @ theta.values - hyper.alpha * log_partition(theta))


@dataclass
class _DualSolution:
    theta: ThetaVector
    residual: float
    converged: bool
    diverged: bool
    iterations: int


def solve_mean_equations(model: Model, target: np.ndarray, gtol: float = GRADIENT_TOL,
                         max_iter: int = MAX_NEWTON_ITER, bound: float = DIVERGENCE_BOUND,
                         start: Optional[np.ndarray] = None) -> _DualSolution:
    """Damped Newton ascent on ``<target, theta> - k(theta)``.

    Stops when ``max|target - mean_map(theta)| < gtol``, when some
    ``|theta| >= bound`` (divergence) or after ``max_iter`` iterations.
    """
    target = np.asarray(target, dtype=float)
    values = np.zeros(model.dim) if start is None else np.array(start, dtype=float)
    theta = ThetaVector(model, values)
    objective = float(target @ values - log_partition(theta))
    residual = np.inf
    for it in range(max_iter + 1):
        mean, cov = mean_and_covariance(theta)
        grad = target - mean
        residual = float(np.max(np.abs(grad))) if grad.size else 0.0
        if residual < gtol:
            return _DualSolution(theta, residual, True, False, it)
        if it == max_iter:
            break
        try:
            step = np.linalg.solve(cov, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(cov, grad, rcond=None)[0]
        slope = float(grad @ step)
        if not np.isfinite(slope) or slope <= 0:
            step, slope = grad, float(grad @ grad)
        t = 1.0
        while True:
            cand = ThetaVector(model, values + t * step)
            new_obj = float(target @ cand.values - log_partition(cand))
            if new_obj >= objective + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-14:
                return _DualSolution(theta, residual, False, False, it)
        values, theta, objective = cand.values, cand, new_obj
        if np.max(np.abs(values)) >= bound:
            return _DualSolution(theta, residual, False, True, it + 1)
    return _DualSolution(theta, residual, False, False, max_iter)


def check_proper(hyper: Hyperparameters, gtol: float = GRADIENT_TOL) -> PropernessReport:
    """Decide whether ``(s, alpha)`` gives a proper prior.

    Proper means: ``alpha > 0`` and the mean equations ``mean_map(theta) =
    s/alpha`` have a finite solution whose table is strictly inside the
    simplex.  Non-convergence is reported as improper with its residual.
    """
    if not hyper.alpha > 0:
        return PropernessReport(False, None, float("inf"), reason="alpha must be positive")
    sol = solve_mean_equations(hyper.model, hyper.s / hyper.alpha, gtol=gtol)
    if sol.diverged:
        return PropernessReport(False, None, sol.residual, sol.theta, sol.iterations,
                                "dual ascent diverged: s/alpha is not a realizable margin vector")
    if not sol.converged:
        return PropernessReport(False, None, sol.residual, sol.theta, sol.iterations,
                                "dual ascent stopped before the residual tolerance")
    witness = full_from_theta(sol.theta)
    if witness.probs.min() < BOUNDARY_TOL:
        return PropernessReport(False, witness, sol.residual, sol.theta, sol.iterations,
                                "s/alpha lies on the boundary of the mean space")
    return PropernessReport(True, witness, sol.residual, sol.theta, sol.iterations)


def necessary_conditions(hyper: Hyperparameters) -> list:
    """Violations of the cheap necessary screen for properness.

    Every ``s(i_D)`` must lie in ``(0, alpha)``, and ``s(i_E) < s(i_D)``
    whenever ``D`` is a proper subset of ``E`` and the cells agree on ``D``.
    """
    model = hyper.model
    problems = []
    if not hyper.alpha > 0:
        problems.append("alpha <= 0")
    for k, (d, cell) in enumerate(model.index):
        if not 0 < hyper.s[k] < hyper.alpha:
            problems.append(f"s{model.label(k)} = {hyper.s[k]:g} not in (0, alpha)")
    for k, (e, ecell) in enumerate(model.index):
        sub = dict(zip(e, ecell))
        for r in range(1, len(e)):
            for j, (d, dcell) in enumerate(model.index):
                if len(d) == r and set(d) < set(e) and all(sub[v] == c for v, c in zip(d, dcell)):
                    if not hyper.s[k] < hyper.s[j]:
                        problems.append(f"s{model.label(k)} >= s{model.label(j)}")
    return problems


def construct_from_theta(theta0: ThetaVector, alpha: float = 1.0) -> Hyperparameters:
    """Hyperparameters whose mean vector is the margin vector of ``theta0``."""
    if not alpha > 0:
        raise ImproperPriorError("alpha must be positive")
    return Hyperparameters(theta0.model, alpha * mean_map(theta0), alpha)


def construct_from_prior_table(table: ContingencyTable, model: Model) -> Hyperparameters:
    """Marginal counts of a strictly positive prior table, alpha = its total."""
    if table.space != model.space:
        raise ModelError("prior table and model use different spaces")
    if np.any(table.counts <= 0):
        raise ImproperPriorError("prior table has a zero cell; the MLE may not exist")
    return Hyperparameters(model, sufficient_statistics(table, model), table.total)


def perks_prior(model: Model) -> Hyperparameters:
    """The vague prior from a pseudo-table with every cell equal to 1/|I|."""
    space = model.space
    return construct_from_prior_table(ContingencyTable(space, np.full(space.shape, 1.0 / space.size)), model)


def posterior_update(hyper: Hyperparameters, data: ContingencyTable) -> Hyperparameters:
    """``(s + y, alpha + n)`` with ``y`` the data's marginal counts."""
    if data.space != hyper.model.space:
        raise ModelError("data table and model use different spaces")
    return Hyperparameters(hyper.model, hyper.s + sufficient_statistics(data, hyper.model),
                           hyper.alpha + data.total)


def _broadcast_shape(model: Model, subset) -> tuple:
    keep = set(subset)
    return tuple(k if v in keep else 1 for v, k in zip(model.space.variables, model.space.levels))


def ipf_fit(model: Model, targets: dict, tol: float = IPF_TOL, max_sweeps: int = IPF_MAX_SWEEPS) -> FullProbTable:
    """Iterative proportional fitting to the margins of the maximal sets.

    ``targets`` maps each maximal interaction set to its target margin
    (counts or probabilities, all with a common total).  Returns the
    fitted probability table, whose margins times the total reproduce
    the targets.
    """
    space = model.space
    norm = {}
    for key, table in targets.items():
        key = space.canonical(key)
        table = np.asarray(table, dtype=float)
        if table.shape != tuple(space.level_count(v) for v in key):
            raise ModelError(f"target margin for {key} has the wrong shape")
        norm[key] = table
    missing = [g for g in model.maximal_sets if g not in norm]
    if missing:
        raise ModelError(f"no target margin for {missing}")
    totals = [t.sum() for t in norm.values()]
    total = totals[0]
    if any(abs(t - total) > 1e-9 * max(1.0, abs(total)) for t in totals):
        raise ModelError("target margins have different totals")
    if any(np.any(t <= 0) for t in norm.values()):
        raise ModelError("target margins must be strictly positive")
    gens = list(model.maximal_sets)
    probs = {g: norm[g] / total for g in gens}
    for a in range(len(gens)):
        for b in range(a + 1, len(gens)):
            common = set(gens[a]) & set(gens[b])
            if not common:
                continue
            sa = tuple(k for k, v in enumerate(gens[a]) if v not in common)
            sb = tuple(k for k, v in enumerate(gens[b]) if v not in common)
            ma = probs[gens[a]].sum(axis=sa) if sa else probs[gens[a]]
            mb = probs[gens[b]].sum(axis=sb) if sb else probs[gens[b]]
            if np.max(np.abs(ma - mb)) > 1e-9:
                raise ModelError(f"target margins {gens[a]} and {gens[b]} disagree on their overlap")

    p = np.full(space.shape, 1.0 / space.size)
    for sweep in range(max_sweeps):
        for g in gens:
            current = marginalize(p, space, g)
            p = p * (probs[g] / current).reshape(_broadcast_shape(model, g))
        err = max(float(np.max(np.abs(marginalize(p, space, g) - probs[g]))) for g in gens)
        if err < tol:
            log.debug("IPF converged after %d sweeps (max margin error %.3g)", sweep + 1, err)
            return FullProbTable(space, p / p.sum())
    raise RuntimeError(f"IPF did not converge in {max_sweeps} sweeps (max margin error {err:.3g})")
