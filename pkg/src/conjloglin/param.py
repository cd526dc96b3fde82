"""Corner-point (GLIM) log-linear parametrization of cell probabilities.

The interaction term of a full cell ``j`` with support ``E`` (the set of
variables at a nonzero level) is the Moebius alternating sum of
``log p`` over the cells ``(j_F, 0)`` for ``F`` subset of ``E``.  Taking
first differences against level 0 along every axis computes all of these
sums at once, and the cumulative inverse rebuilds ``log p``.  Cells whose
support is not an interaction set of the model carry a zero term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .model import ContingencyTable, Model, ModelError, VariableSpace

NORMALIZATION_TOL = 1e-10
STRICT_TOL = 1e-8


class ParametrizationError(ValueError):
    """Raised for tables outside the open simplex or off the model."""


@dataclass(frozen=True, eq=False)
class ThetaVector:
    """Free log-linear parameters in canonical order.

    ``empty`` holds the base-cell term ``log p(0)`` when the vector was
    derived from probabilities; it is not a free coordinate.
    """

    model: Model
    values: np.ndarray
    empty: Optional[float] = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.size != self.model.dim:
            raise ModelError(f"expected {self.model.dim} parameters, got {vals.size}")
        object.__setattr__(self, "values", vals)

    def __getitem__(self, label):
        d, cell = label
        return self.values[self.model.position[(self.model.space.canonical(d), tuple(cell))]]


@dataclass(frozen=True, eq=False)
class FreeProbVector:
    """Base-cell probability plus the probabilities of cells (i_D, 0)."""

    model: Model
    p_empty: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.size != self.model.dim:
            raise ModelError(f"expected {self.model.dim} probabilities, got {vals.size}")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "p_empty", float(self.p_empty))

    def __getitem__(self, label):
        d, cell = label
        return self.values[self.model.position[(self.model.space.canonical(d), tuple(cell))]]


@dataclass(frozen=True, eq=False)
class FullProbTable:
    space: VariableSpace
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.shape != self.space.shape:
            raise ModelError("probability table shape does not match the space")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ParametrizationError("probabilities must be finite and nonnegative")
        if abs(probs.sum() - 1.0) > NORMALIZATION_TOL:
            raise ParametrizationError(f"probabilities sum to {probs.sum():.15g}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    def marginal(self, subset):
        from .model import marginalize

        return marginalize(self.probs, self.space, subset)


def corner_differences(table: np.ndarray) -> np.ndarray:
    """Subtract the level-0 slice along every axis (Moebius inversion)."""
    out = np.array(table, dtype=float)
    for ax in range(out.ndim):
        base = np.take(out, [0], axis=ax)
        idx = [slice(None)] * out.ndim
        idx[ax] = slice(1, None)
        out[tuple(idx)] -= base
    return out


def corner_sums(table: np.ndarray) -> np.ndarray:
    """Inverse of :func:`corner_differences`."""
    out = np.array(table, dtype=float)
    for ax in range(out.ndim):
        base = np.take(out, [0], axis=ax)
        idx = [slice(None)] * out.ndim
        idx[ax] = slice(1, None)
        out[tuple(idx)] += base
    return out


def support_mask(model: Model) -> np.ndarray:
    """Boolean table marking cells whose support is an interaction set."""
    mask = np.zeros(model.space.shape, dtype=bool)
    mask.flat[model.label_cells] = True
    return mask


def _as_probs(probs, space: VariableSpace) -> np.ndarray:
    if isinstance(probs, FullProbTable):
        return probs.probs
    arr = np.asarray(probs, dtype=float)
    if arr.shape != space.shape:
        raise ModelError("probability table shape does not match the space")
    return arr


def saturated_theta(probs: np.ndarray) -> np.ndarray:
    """Interaction terms of every cell, unrestricted by any model."""
    probs = np.asarray(probs, dtype=float)
    if np.any(probs <= 0):
        raise ParametrizationError("probabilities must be strictly positive")
    return corner_differences(np.log(probs))


def theta_from_full(probs, model: Model, strict: bool = False) -> ThetaVector:
    """Log-linear parameters of a positive table, restricted to the model.

    With ``strict`` the terms outside the model must vanish (within 1e-8);
    otherwise they are dropped, which projects the table onto the model.
    """
    arr = _as_probs(probs, model.space)
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise ParametrizationError("probabilities must be strictly positive")
    if abs(arr.sum() - 1.0) > NORMALIZATION_TOL:
        raise ParametrizationError(f"probabilities sum to {arr.sum():.15g}, not 1")
    terms = corner_differences(np.log(arr))
    if strict:
        off = terms.copy()
        off[support_mask(model)] = 0.0
        off.flat[0] = 0.0
        worst = float(np.max(np.abs(off)))
        if worst >= STRICT_TOL:
            raise ParametrizationError(f"table is not in the model: off-model term {worst:.3g}")
    return ThetaVector(model, terms.flat[model.label_cells], empty=float(terms.flat[0]))


def _log_weights(theta: ThetaVector) -> np.ndarray:
    model = theta.model
    terms = np.zeros(model.space.shape)
    terms.flat[model.label_cells] = theta.values
    return corner_sums(terms)


def log_partition(theta: ThetaVector) -> float:
    """``log(1 + sum_{j != 0} exp(sum of j's interaction terms))``."""
    return float(logsumexp(_log_weights(theta)))


def log_full_from_theta(theta: ThetaVector) -> np.ndarray:
    lw = _log_weights(theta)
    return lw - logsumexp(lw)


def full_from_theta(theta: ThetaVector) -> FullProbTable:
    return FullProbTable(theta.model.space, np.exp(log_full_from_theta(theta)))


def mean_map(theta: ThetaVector) -> np.ndarray:
    """Marginal probabilities of each labelled cell: the gradient of the log-partition."""
    p = np.exp(log_full_from_theta(theta)).reshape(-1)
    return np.asarray(theta.model.design.T @ p).reshape(-1)


def mean_and_covariance(theta: ThetaVector):
    """Mean map and Hessian of the log-partition (covariance of the indicators)."""
    p = np.exp(log_full_from_theta(theta)).reshape(-1)
    x = theta.model.design
    mean = np.asarray(x.T @ p).reshape(-1)
    second = (x.T @ x.multiply(p[:, None])).toarray()
    return mean, second - np.outer(mean, mean)


def sufficient_statistics(table, model: Model) -> np.ndarray:
    """Marginal counts n(i_D) in canonical order."""
    counts = table.counts if isinstance(table, ContingencyTable) else np.asarray(table, dtype=float)
    if counts.shape != model.space.shape:
        raise ModelError("table does not match the model's space")
    return np.asarray(model.design.T @ counts.reshape(-1)).reshape(-1)


def log_likelihood(theta: ThetaVector, table) -> float:
    """Multinomial log-likelihood up to the multinomial coefficient."""
    counts = table.counts if isinstance(table, ContingencyTable) else np.asarray(table, dtype=float)
    y = sufficient_statistics(counts, theta.model)
    return float(y @ theta.values - counts.sum() * log_partition(theta))


def free_from_full(probs, model: Model) -> FreeProbVector:
    arr = _as_probs(probs, model.space)
    return FreeProbVector(model, float(arr.flat[0]), arr.flat[model.label_cells])


def theta_from_free(free: FreeProbVector) -> ThetaVector:
    """Log-linear parameters implied by free probabilities and p(0)."""
    model = free.model
    if free.p_empty <= 0 or np.any(free.values <= 0):
        raise ParametrizationError("free probabilities must be strictly positive")
    logs = np.zeros(model.space.shape)
    logs.flat[0] = np.log(free.p_empty)
    logs.flat[model.label_cells] = np.log(free.values)
    # every subset of an interaction set is one, so the differences at
    # labelled cells only read labelled cells and the base cell
    terms = corner_differences(logs)
    return ThetaVector(model, terms.flat[model.label_cells], empty=float(terms.flat[0]))


def complete_cells(free: FreeProbVector) -> FullProbTable:
    """Fill in the constrained cells from the free probabilities."""
    theta = theta_from_free(free)
    terms = np.zeros(free.model.space.shape)
    terms.flat[0] = theta.empty
    terms.flat[free.model.label_cells] = theta.values
    probs = np.exp(corner_sums(terms))
    total = probs.sum()
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise ParametrizationError(f"free probabilities are inconsistent: completion sums to {total:.15g}")
    return FullProbTable(free.model.space, probs / total)
