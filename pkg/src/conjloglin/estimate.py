"""Normalizing constants, Bayes factors and prior moments.

``log_i`` dispatches on the model: decomposable graphs get the exact
hyper Dirichlet normalizer, other graphical models are assembled from
their prime components and (complete) separators, and non-graphical
hierarchical models are integrated numerically on the whole space.

The numerical routes start from the prior mode.  The Laplace route uses
the Hessian of the log-partition there; the importance route draws from a
multivariate t with 5 degrees of freedom centred at the mode with scale
``(alpha * H)^{-1}``.  Draws are split into fixed-size chunks, each seeded
from ``(seed, chunk index)``, so results do not depend on how many
workers evaluate the chunks.
"""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_t

from .decomposable import NotDecomposableError, component_terms, log_i_decomposable
from .graphs import perfect_ordering, prime_components
from .induced import hyper_from_exponents, induced_exponents
from .model import ContingencyTable, Model, ModelError
from .param import ThetaVector, mean_and_covariance
from .prior import (
    Hyperparameters,
    ImproperPriorError,
    check_proper,
    log_prior_unnorm,
    necessary_conditions,
    posterior_update,
    solve_mean_equations,
)

log = logging.getLogger(__name__)

CLOSED_FORM = "closed_form"
LAPLACE = "laplace"
IMPORTANCE = "importance"
COMPONENT_ASSEMBLY = "component_assembly"

DEFAULT_DRAWS = 100_000
CHUNK_SIZE = 10_000
MIN_DRAWS = 1_000
PROPOSAL_DF = 5
LAPLACE_DIM = 40
MODE_TOL = 1e-8
LOW_ESS_FRACTION = 0.01


class EstimationError(ArithmeticError):
    """Raised when a numerical route cannot produce an estimate."""


@dataclass(frozen=True)
class EvidencePolicy:
    """How ``log_i`` picks and runs a method.

    ``method`` is one of ``auto``, ``closed``, ``laplace`` or ``is``.
    Under ``auto`` decomposable graphs use the closed form, models with
    more than ``laplace_dim`` parameters use Laplace, and the rest use
    importance sampling.
    """

    method: str = "auto"
    draws: int = DEFAULT_DRAWS
    seed: int = 0
    laplace_dim: int = LAPLACE_DIM
    workers: int = 1

    def __post_init__(self):
        if self.method not in ("auto", "closed", "laplace", "is"):
            raise ValueError(f"unknown evidence method {self.method!r}")


@dataclass(frozen=True, eq=False)
class EvidenceResult:
    log_i: float
    method: str
    std_error: Optional[float] = None
    mode: Optional[ThetaVector] = None
    seed: int = 0
    ess: Optional[float] = None
    diagnostics: tuple = ()
    components: tuple = ()  # (sign, model hash, EvidenceResult) for assemblies

    def to_json(self) -> dict:
        out = {"log_i": self.log_i, "method": self.method, "seed": self.seed}
        if self.std_error is not None:
            out["std_error"] = self.std_error
        if self.ess is not None:
            out["ess"] = self.ess
        if self.mode is not None:
            out["mode"] = [float(v) for v in self.mode.values]
        if self.components:
            out["components"] = [
                {"sign": sign, "model_hash": h, **res.to_json()} for sign, h, res in self.components
            ]
        out["diagnostics"] = list(self.diagnostics)
        return out


# -- mode and Laplace ------------------------------------------------------

def find_mode(hyper: Hyperparameters) -> ThetaVector:
    """Maximizer of ``<s, theta> - alpha k(theta)``: solves mean_map = s / alpha."""
    if not hyper.alpha > 0:
        raise ImproperPriorError("alpha must be positive")
    # the gradient of the log prior is alpha times the mean residual
    sol = solve_mean_equations(hyper.model, hyper.s / hyper.alpha, gtol=MODE_TOL / max(hyper.alpha, 1.0))
    if sol.diverged:
        raise ImproperPriorError("no prior mode: s/alpha is not a realizable margin vector")
    if not sol.converged:
        problems = necessary_conditions(hyper)
        if problems:
            raise ImproperPriorError("no prior mode: " + "; ".join(problems))
        raise EstimationError(f"mode search stalled with mean residual {sol.residual:.3g}")
    return sol.theta


def _scaled_hessian(mode: ThetaVector, alpha: float) -> np.ndarray:
    _, cov = mean_and_covariance(mode)
    return alpha * cov


def laplace_log_i(hyper: Hyperparameters, mode: Optional[ThetaVector] = None) -> EvidenceResult:
    mode = mode if mode is not None else find_mode(hyper)
    d = hyper.model.dim
    sign, logdet = np.linalg.slogdet(_scaled_hessian(mode, hyper.alpha))
    if sign <= 0 or not np.isfinite(logdet):
        raise EstimationError("Hessian at the mode is singular; hyperparameters are near the boundary")
    value = log_prior_unnorm(mode, hyper) + 0.5 * d * np.log(2 * np.pi) - 0.5 * logdet
    return EvidenceResult(float(value), LAPLACE, mode=mode)


# -- importance sampling ---------------------------------------------------

def batch_log_prior_unnorm(thetas: np.ndarray, hyper: Hyperparameters) -> np.ndarray:
    """``log_prior_unnorm`` for every row of ``thetas``."""
    model = hyper.model
    eta = model.design @ thetas.T  # log weight of every cell, one column per draw
    return thetas @ hyper.s - hyper.alpha * logsumexp(eta, axis=0)


@dataclass(frozen=True)
class _Proposal:
    dist: object

    @classmethod
    def at_mode(cls, mode: ThetaVector, alpha: float) -> "_Proposal":
        h = _scaled_hessian(mode, alpha)
        try:
            shape = np.linalg.inv(h)
            np.linalg.cholesky(shape)
        except np.linalg.LinAlgError:
            raise EstimationError("Hessian at the mode is singular; cannot build a proposal") from None
        shape = 0.5 * (shape + shape.T)
        return cls(multivariate_t(loc=mode.values, shape=shape, df=PROPOSAL_DF))

    def draw(self, n: int, seed: int, chunk: int):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk,)))
        x = np.atleast_2d(self.dist.rvs(size=n, random_state=rng)).reshape(n, -1)
        return x, np.atleast_1d(self.dist.logpdf(x))


def _chunks(draws: int):
    out, start = [], 0
    while start < draws:
        out.append(min(CHUNK_SIZE, draws - start))
        start += CHUNK_SIZE
    return out


def _sample_weights(hyper, proposal, draws, seed, workers, extra=None):
    """Log importance weights (and optional per-draw statistics), in chunk order."""

    def run(args):
        k, n = args
        x, logq = proposal.draw(n, seed, k)
        lw = batch_log_prior_unnorm(x, hyper) - logq
        return lw, (extra(x) if extra is not None else None)

    jobs = list(enumerate(_chunks(draws)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    lw = np.concatenate([p[0] for p in parts])
    stats = np.concatenate([p[1] for p in parts]) if extra is not None else None
    return lw, stats


def _check_draws(draws: int):
    if draws < MIN_DRAWS:
        raise ValueError(f"importance sampling needs at least {MIN_DRAWS} draws")


def importance_log_i(hyper: Hyperparameters, draws: int = DEFAULT_DRAWS, seed: int = 0,
                     workers: int = 1, mode: Optional[ThetaVector] = None) -> EvidenceResult:
    """Importance-sampling estimate of log I with a delta-method standard error."""
    _check_draws(draws)
    mode = mode if mode is not None else find_mode(hyper)
    proposal = _Proposal.at_mode(mode, hyper.alpha)
    lw, _ = _sample_weights(hyper, proposal, draws, seed, workers)
    top = lw.max()
    w = np.exp(lw - top)
    mean = w.mean()
    se = float(w.std(ddof=1) / (np.sqrt(draws) * mean))
    ess = float(w.sum() ** 2 / np.sum(w * w))
    diagnostics = ()
    if ess < LOW_ESS_FRACTION * draws:
        diagnostics = (f"low effective sample size {ess:.1f} of {draws} draws",)
        log.warning(diagnostics[0])
    return EvidenceResult(float(top + np.log(mean)), IMPORTANCE, se, mode, seed, ess, diagnostics)


def importance_moment(hyper: Hyperparameters, fn: Callable[[np.ndarray], np.ndarray],
                      draws: int = DEFAULT_DRAWS, seed: int = 0, workers: int = 1):
    """Self-normalized estimate of ``E[fn(theta)]`` under the prior, with its standard error.

    ``fn`` maps an ``(n, d)`` array of parameter vectors to ``n`` values.
    """
    _check_draws(draws)
    mode = find_mode(hyper)
    proposal = _Proposal.at_mode(mode, hyper.alpha)
    lw, g = _sample_weights(hyper, proposal, draws, seed, workers, extra=fn)
    w = np.exp(lw - lw.max())
    w /= w.sum()
    est = float(w @ g)
    se = float(np.sqrt(np.sum(w * w * (g - est) ** 2)))
    return est, se


# -- dispatch --------------------------------------------------------------

def is_decomposable_model(model: Model) -> bool:
    return model.is_graphical and perfect_ordering(model.dependence_graph) is not None


def _numeric(hyper: Hyperparameters, policy: EvidencePolicy) -> EvidenceResult:
    method = policy.method
    if method in ("auto", "closed"):
        method = "laplace" if hyper.model.dim > policy.laplace_dim else "is"
    mode = find_mode(hyper)
    if method == "laplace":
        return replace(laplace_log_i(hyper, mode), seed=policy.seed)
    return importance_log_i(hyper, policy.draws, policy.seed, policy.workers, mode)


def _closed(hyper: Hyperparameters, policy: EvidencePolicy) -> EvidenceResult:
    return EvidenceResult(log_i_decomposable(hyper), CLOSED_FORM, seed=policy.seed)


def _component(hyper: Hyperparameters, policy: EvidencePolicy) -> EvidenceResult:
    if is_decomposable_model(hyper.model):
        return _closed(hyper, policy)
    return _numeric(hyper, policy)


def log_i(model: Model, hyper: Hyperparameters, policy: Optional[EvidencePolicy] = None) -> EvidenceResult:
    """Natural log of the prior normalizing constant I(s, alpha)."""
    policy = policy or EvidencePolicy()
    if hyper.model != model:
        raise ModelError("hyperparameters belong to a different model")
    if policy.method == "closed":
        if not is_decomposable_model(model):
            raise NotDecomposableError("the closed form needs a decomposable graph")
        return _closed(hyper, policy)
    if not model.is_graphical:
        return _numeric(hyper, policy)
    if is_decomposable_model(model):
        if policy.method == "auto":
            return _closed(hyper, policy)
        return _numeric(hyper, policy)
    dec = prime_components(model.dependence_graph)
    if len(dec.components) == 1:
        return _numeric(hyper, policy)

    parts, total, var, diagnostics = [], 0.0, 0.0, []
    for sign, sub in component_terms(model, dec):
        res = _component(hyper.restrict(sub), policy)
        parts.append((sign, sub.hash, res))
        total += sign * res.log_i
        if res.std_error is not None:
            var += res.std_error ** 2
        diagnostics.extend(res.diagnostics)
    se = float(np.sqrt(var)) if any(r.std_error is not None for _, _, r in parts) else None
    return EvidenceResult(float(total), COMPONENT_ASSEMBLY, se, None, policy.seed,
                          diagnostics=tuple(diagnostics), components=tuple(parts))


# -- Bayes factors ---------------------------------------------------------

@dataclass(frozen=True)
class BayesFactor:
    log_bf: float
    std_error: Optional[float] = None
    recomputed: int = 0
    cancelled: int = 0
    diagnostics: tuple = ()

    def __float__(self):
        return self.log_bf


def _evidence_terms(model: Model, hyper: Hyperparameters, post: Hyperparameters, local: bool) -> list:
    """Signed ``(key, prior hyper, posterior hyper)`` pieces of ``log I(post) - log I(prior)``."""
    if local and model.is_graphical:
        out = []
        for sign, sub in component_terms(model):
            h, p = hyper.restrict(sub), post.restrict(sub)
            key = (sub.hash, h.s.tobytes(), h.alpha, p.s.tobytes(), p.alpha)
            out.append((sign, key, h, p))
        return out
    key = (model.hash, hyper.s.tobytes(), hyper.alpha, post.s.tobytes(), post.alpha)
    return [(1, key, hyper, post)]


def bayes_factor(model1: Model, model2: Model, hyper1: Hyperparameters, hyper2: Hyperparameters,
                 data: ContingencyTable, policy: Optional[EvidencePolicy] = None,
                 local: bool = True) -> BayesFactor:
    """log BF of model 1 against model 2 given ``data``.

    With ``local`` each graphical model is split into prime components and
    separators; pieces shared by both models (same margin, same
    hyperparameters) cancel and are never computed.
    """
    policy = policy or EvidencePolicy()
    if model1.space != model2.space or data.space != model1.space:
        raise ModelError("models and data must share one variable space")
    for h in (hyper1, hyper2):
        rep = check_proper(h)
        if not rep.proper:
            raise ImproperPriorError(f"improper prior: {rep.reason}")
    post1, post2 = posterior_update(hyper1, data), posterior_update(hyper2, data)

    weight, pieces = Counter(), {}
    for side, (m, h, p) in ((1, (model1, hyper1, post1)), (-1, (model2, hyper2, post2))):
        for sign, key, hp, pp in _evidence_terms(m, h, p, local):
            weight[key] += side * sign
            pieces[key] = (hp, pp)
    total, var, diagnostics, recomputed = 0.0, 0.0, [], 0
    for key, wt in weight.items():
        if wt == 0:
            continue
        hp, pp = pieces[key]
        for scale, hyp in ((1, pp), (-1, hp)):
            res = log_i(hyp.model, hyp, policy)
            total += wt * scale * res.log_i
            if res.std_error is not None:
                var += (wt * res.std_error) ** 2
            diagnostics.extend(res.diagnostics)
        recomputed += 1
    cancelled = sum(1 for wt in weight.values() if wt == 0)
    se = float(np.sqrt(var)) if var > 0 else None
    return BayesFactor(float(total), se, recomputed, cancelled, tuple(diagnostics))


# -- prior moments ---------------------------------------------------------

@dataclass(frozen=True)
class Moment:
    value: float
    method: str
    std_error: Optional[float] = None


def _log_ratio(base: Hyperparameters, other: Hyperparameters, policy: EvidencePolicy) -> float:
    return log_i(other.model, other, policy).log_i - log_i(base.model, base, policy).log_i


def prior_moment_exp_theta(hyper: Hyperparameters, subset, cell, order: int = 1,
                           policy: Optional[EvidencePolicy] = None) -> Moment:
    """Mean (``order=1``) or variance (``order=2``) of ``exp(theta_D(i_D))`` under the prior.

    Both come from ratios I(s + k e) / I(s).  Decomposable models use the
    closed form; other models are estimated by self-normalized importance
    sampling of ``exp(theta)`` and ``exp(2 theta)``.
    """
    policy = policy or EvidencePolicy()
    if order not in (1, 2):
        raise ValueError("order must be 1 (mean) or 2 (variance)")
    model = hyper.model
    label = (model.space.canonical(subset), tuple(cell))
    k = model.position[label]
    for step in range(1, order + 1):
        rep = check_proper(hyper.shifted(label, step))
        if not rep.proper:
            raise ImproperPriorError(f"E(exp({step} theta)) does not exist: shifted prior is improper")

    if is_decomposable_model(model) and policy.method in ("auto", "closed"):
        m1 = float(np.exp(_log_ratio(hyper, hyper.shifted(label, 1), policy)))
        if order == 1:
            return Moment(m1, CLOSED_FORM)
        m2 = float(np.exp(_log_ratio(hyper, hyper.shifted(label, 2), policy)))
        return Moment(m2 - m1 * m1, CLOSED_FORM)

    if order == 1:
        est, se = importance_moment(hyper, lambda x: np.exp(x[:, k]), policy.draws, policy.seed, policy.workers)
        return Moment(est, IMPORTANCE, se)
    m1, _ = importance_moment(hyper, lambda x: np.exp(x[:, k]), policy.draws, policy.seed, policy.workers)
    m2, se2 = importance_moment(hyper, lambda x: np.exp(2 * x[:, k]), policy.draws, policy.seed, policy.workers)
    return Moment(m2 - m1 * m1, IMPORTANCE, se2)


def induced_moment(hyper: Hyperparameters, shifts: dict, shift_empty: float = 0.0,
                   policy: Optional[EvidencePolicy] = None) -> Moment:
    """``E(prod p(i_D, 0)^delta * p_empty^delta_empty)`` under the induced prior.

    ``shifts`` maps ``(subset, cell)`` labels to exponent increments.  The
    shifted exponents are mapped back to hyperparameters and the moment is
    the ratio of the two normalizing constants.
    """
    policy = policy or EvidencePolicy()
    model = hyper.model
    ex = induced_exponents(hyper)
    cells = ex.alpha_cell.copy()
    for (subset, cell), delta in shifts.items():
        cells[model.position[(model.space.canonical(subset), tuple(cell))]] += delta
    shifted = hyper_from_exponents(model, cells, ex.alpha_empty + shift_empty)
    rep = check_proper(shifted)
    if not rep.proper:
        raise ImproperPriorError("the shifted exponents give an improper prior; the moment is infinite")
    res_base = log_i(model, hyper, policy)
    res_shift = log_i(model, shifted, policy)
    value = float(np.exp(res_shift.log_i - res_base.log_i))
    se = None
    if res_base.std_error is not None and res_shift.std_error is not None:
        se = value * float(np.hypot(res_base.std_error, res_shift.std_error))
    return Moment(value, res_base.method, se)
