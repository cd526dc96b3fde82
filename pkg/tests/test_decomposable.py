from itertools import permutations

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import betaln

from conjloglin.decomposable import (
    NotDecomposableError,
    clique_sep_alphas,
    clique_separator_probs,
    decomposable_log_jacobian,
    free_margin_coordinates,
    hyper_dirichlet_log_density,
    log_i_decomposable,
    markov_ratio_log_prior,
)
from conjloglin.estimate import log_i
from conjloglin.induced import induced_exponents, induced_log_density, jacobian_factor
from conjloglin.model import Model, ModelError, VariableSpace
from conjloglin.param import ThetaVector, free_from_full, full_from_theta
from conjloglin.prior import Hyperparameters, construct_from_theta, log_prior_unnorm, perks_prior

from conftest import binary_graphical, chain, chain_322, cycle_pendant, four_cycle, numeric_jacobian, spina_bifida

STAR = ("abcd", ["ab", "ac", "ad"])


def test_single_variable_is_beta():
    m = Model.saturated(VariableSpace.binary("a"))
    for sa, alpha in [(2.0, 5.0), (0.3, 1.0), (7.5, 8.0)]:
        assert_allclose(log_i_decomposable(Hyperparameters(m, [sa], alpha)), betaln(sa, alpha - sa), rtol=1e-13)


def test_spina_bifida_blocks():
    m = spina_bifida()
    sa, sb, sc, sbc, alpha = 1.0, 2.0, 3.0, 0.5, 6.0
    blocks = clique_sep_alphas(Hyperparameters(m, [sa, sb, sc, sbc], alpha))
    by_vertices = {b.vertices: b for b in blocks.cliques}
    assert_allclose(by_vertices[("b", "c")].values, [alpha - sb - sc + sbc, sb - sbc, sc - sbc, sbc])
    assert_allclose(by_vertices[("a",)].values, [alpha - sa, sa])


def test_chain_perks_blocks():
    blocks = clique_sep_alphas(perks_prior(chain()))
    for b in blocks.cliques:
        assert_allclose(b.values, 0.25)
    assert_allclose(blocks.separators[0].values, 0.5)


@pytest.mark.parametrize("make", [chain, chain_322, spina_bifida, lambda: binary_graphical(*STAR)])
def test_blocks_are_hyperconsistent(make, rng):
    m = make()
    h = construct_from_theta(ThetaVector(m, rng.normal(size=m.dim)), 3.7)
    for _, block in clique_sep_alphas(h).blocks():
        assert_allclose(block.total, 3.7)


def test_saturated_single_clique_matches_induced_exponents(rng):
    m = Model.saturated(VariableSpace(("a", "b"), (3, 2)))
    h = construct_from_theta(ThetaVector(m, rng.normal(size=m.dim)), 2.0)
    (block,) = clique_sep_alphas(h).cliques
    ex = induced_exponents(h)
    assert_allclose(block.exponents.alpha_cell, ex.alpha_cell)
    assert_allclose(block.exponents.alpha_empty, ex.alpha_empty)


def test_not_decomposable():
    with pytest.raises(NotDecomposableError):
        log_i_decomposable(perks_prior(four_cycle()))


def test_spina_bifida_gamma_ratio():
    m = spina_bifida()
    sa, sb, sc, sbc, alpha = 1.0, 4.0, 3.5, 1.5, 9.0
    h = Hyperparameters(m, [sa, sb, sc, sbc], alpha)
    shifted = h.shifted(("bc", (1, 1)), 1.0)
    ratio = np.exp(log_i_decomposable(shifted) - log_i_decomposable(h))
    expected = sbc * (alpha - sb - sc + sbc) / ((sb - sbc - 1) * (sc - sbc - 1))
    assert_allclose(ratio, expected, rtol=1e-12)


def _orderings(cliques):
    """Every clique order with running intersection, with its separators."""
    for order in permutations(cliques):
        seps, ok = [], True
        for k in range(1, len(order)):
            earlier = set().union(*map(set, order[:k]))
            sep = set(order[k]) & earlier
            if not any(sep <= set(c) for c in order[:k]):
                ok = False
                break
            seps.append(tuple(sorted(sep)))
        if ok:
            yield list(order), seps


def test_perfect_ordering_invariance(rng):
    m = binary_graphical("abcde", ["ab", "bc", "bd", "cd", "de"])
    h = construct_from_theta(ThetaVector(m, rng.normal(size=m.dim)), 2.5)
    cliques = [("a", "b"), ("b", "c", "d"), ("d", "e")]
    values = [log_i_decomposable(h, o) for o in _orderings(cliques)]
    assert len(values) >= 2
    assert np.ptp(values) < 1e-12


def _random_interior(m, rng):
    return full_from_theta(ThetaVector(m, rng.normal(size=m.dim)))


@pytest.mark.parametrize("make", [chain, chain_322, spina_bifida, lambda: binary_graphical(*STAR)])
def test_decomposable_jacobian(make, rng):
    m = make()

    def fn(values):
        p = full_from_theta(ThetaVector(m, values))
        return free_margin_coordinates(clique_separator_probs(p, m), m)

    for _ in range(3):
        theta = rng.normal(size=m.dim)
        num = np.linalg.det(numeric_jacobian(fn, theta))
        csp = clique_separator_probs(full_from_theta(ThetaVector(m, theta)), m)
        assert_allclose(decomposable_log_jacobian(csp), np.log(abs(num)), atol=1e-7)


def test_hyper_dirichlet_equals_induced_route(rng):
    m = chain()
    for _ in range(3):
        h = construct_from_theta(ThetaVector(m, rng.normal(size=m.dim)), rng.uniform(1, 6))
        alphas = clique_sep_alphas(h)
        log_norm = log_i_decomposable(h)
        done = 0
        while done < 10:
            p = _random_interior(m, rng)
            free = free_from_full(p, m)
            jac = jacobian_factor(free)
            if jac.K <= 0:
                continue
            csp = clique_separator_probs(p, m)
            lhs = hyper_dirichlet_log_density(csp, alphas, m)
            rhs = induced_log_density(free, h) - log_norm + jac.log_abs_determinant - decomposable_log_jacobian(csp)
            assert abs(lhs - rhs) < 1e-8
            done += 1


def test_single_clique_is_dirichlet(rng):
    from scipy.stats import dirichlet

    m = Model.saturated(VariableSpace.binary("ab"))
    h = construct_from_theta(ThetaVector(m, rng.normal(size=m.dim)), 3.0)
    alphas = clique_sep_alphas(h)
    p = rng.dirichlet(np.ones(4)).reshape(2, 2)
    ex = induced_exponents(h)
    x = np.array([p[0, 0], p[1, 0], p[0, 1], p[1, 1]])
    a = np.array([ex.alpha_empty, *ex.alpha_cell])
    assert_allclose(hyper_dirichlet_log_density(clique_separator_probs(p, m), alphas, m),
                    dirichlet.logpdf(x, a), rtol=1e-12)


def test_separator_mismatch_is_rejected(rng):
    m = chain()
    csp = clique_separator_probs(_random_interior(m, rng), m)
    (cv, ct), rest = csp.cliques[0], csp.cliques[1:]
    bumped = ct.copy()
    bumped[0, 0] += 1e-3
    bumped[0, 1] -= 1e-3  # margin over b changes, total stays 1
    bad = type(csp)(((cv, bumped),) + rest, csp.separators)
    with pytest.raises(ModelError):
        hyper_dirichlet_log_density(bad, clique_sep_alphas(perks_prior(m)), m)


def test_markov_ratio_decomposable_matches_closed_form(rng):
    m = binary_graphical(*STAR)
    h = construct_from_theta(ThetaVector(m, rng.normal(size=m.dim)), 2.0)
    theta = ThetaVector(m, rng.normal(size=m.dim))
    direct = log_prior_unnorm(theta, h) - log_i_decomposable(h)
    assert_allclose(markov_ratio_log_prior(theta, h), direct, atol=1e-10)


def test_markov_ratio_cycle_pendant(rng):
    m = cycle_pendant()
    h = perks_prior(m)
    total = log_i(m, h)
    cache = {sub_hash: res.log_i for _, sub_hash, res in total.components}
    for _ in range(5):
        theta = ThetaVector(m, rng.normal(size=m.dim))
        direct = log_prior_unnorm(theta, h) - total.log_i
        assert abs(markov_ratio_log_prior(theta, h, component_log_i=cache) - direct) < 1e-8
