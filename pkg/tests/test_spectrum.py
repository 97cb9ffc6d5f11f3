import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketchsolve.core import ContractViolation, kappa_bar
from sketchsolve.harness import family_matrix
from sketchsolve.iterative import MatvecHandle
from sketchsolve.spectrum import (
    SchattenQuery,
    choose_rank_for_p,
    hutchinson_trace,
    log_grid,
    nuclear_norm,
    quadrature_estimate,
    scalar_quadrature,
    schatten_estimate,
)

EPS = 0.1


def _family(name, d, seed):
    A = family_matrix(name, d, seed)
    return A, np.linalg.svd(A, compute_uv=False)


@pytest.mark.parametrize("p", [0.5, 1.0, 1.5])
def test_scalar_quadrature_over_six_decades(p):
    grid = log_grid(1e-6 * EPS**2, 1e6 / EPS**2, 80)
    for sigma in np.logspace(-3, 3, 25):
        approx = scalar_quadrature(sigma, p, grid)
        assert abs(approx / sigma**p - 1) <= EPS / 4


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1e-2, 1e2), min_size=1, max_size=12), st.floats(1e-2, 1e2), st.sampled_from([0.5, 1.0, 1.5]))
def test_quadrature_monotone_when_a_value_is_appended(sigmas, extra, p):
    grid = log_grid(1e-8, 1e8, 48)
    a = p / 2

    def est(vals):
        s2 = np.asarray(vals) ** 2
        T = np.array([np.sum(s2 / (s2 + lam)) for lam in grid])
        return quadrature_estimate(T, float(np.sum(s2)), grid, a)

    assert est(sigmas + [extra]) > est(sigmas)


@pytest.mark.parametrize("case", range(10))
def test_hutchinson_is_unbiased(case):
    rng = np.random.default_rng(case)
    d = 20
    B = rng.standard_normal((d, d))
    M = B @ B.T
    est = hutchinson_trace(MatvecHandle.exact(M), 100_000, seed=case)
    off = M - np.diag(np.diag(M))
    sd = math.sqrt(2 * np.sum(off**2) / 100_000)
    assert abs(est - np.trace(M)) <= 5 * sd


def test_nuclear_norm_small_cases():
    assert nuclear_norm(np.diag([3.0, 2.0, 1.0]), EPS, seed=1) == pytest.approx(6.0, rel=1.5 * EPS)
    rng = np.random.default_rng(0)
    u, v = rng.standard_normal(30), rng.standard_normal(10)
    rank1 = np.outer(u, v)
    assert nuclear_norm(rank1, EPS, seed=2) == pytest.approx(np.linalg.norm(u) * np.linalg.norm(v), rel=1.5 * EPS)
    harmonic = np.diag(1.0 / np.arange(1, 201))
    assert nuclear_norm(harmonic, EPS, seed=3) == pytest.approx(np.sum(1.0 / np.arange(1, 201)), rel=1.5 * EPS)


def test_p_two_is_exact():
    A = np.random.default_rng(4).standard_normal((15, 6))
    assert schatten_estimate(A, SchattenQuery(2.0, 0.3)) == pytest.approx(np.sum(A**2), rel=1e-14)
    M = A.T @ A
    assert schatten_estimate(M, SchattenQuery(1.0, 0.3, "pd")) == pytest.approx(np.trace(M), rel=1e-14)


@pytest.mark.parametrize("p", [0.5, 1.5])
def test_other_exponents(p):
    A, s = _family("powerlaw1", 60, seed=5)
    est = schatten_estimate(A, SchattenQuery(p, EPS), seed=5)
    assert est == pytest.approx(np.sum(s**p), rel=1.5 * EPS)


def test_pd_backend():
    A, s = _family("powerlaw1", 60, seed=6)
    M = A.T @ A
    est = schatten_estimate(M, SchattenQuery(0.5, EPS, "pd"), seed=6)
    assert est == pytest.approx(np.sum(s**1.0), rel=1.5 * EPS)


@pytest.mark.parametrize("family", ["step", "powerlaw2", "gaussian"])
@pytest.mark.parametrize("p", [0.5, 1.0])
def test_conditioning_invariant_at_runtime_lambda(family, p):
    """With the refined ``λ̂``, ``κ̄_{0,p}`` of ``[A; √λ̂·I]`` is at most ``(1 + (1/ε)·true/est)^{1/p}``."""
    A, s = _family(family, 50, seed=7)
    trace = []
    est = schatten_estimate(A, SchattenQuery(p, EPS), seed=7, trace=trace)
    true = float(np.sum(s**p))
    assert abs(est / true - 1) <= 1.5 * EPS
    lam_hat = trace[-1]["lambda_hat"]
    shifted = np.sqrt(np.sort(s)[::-1] ** 2 + lam_hat)
    bound = (1 + true / (EPS * est)) ** (1 / p)
    assert kappa_bar(shifted, 0, p) <= bound * (1 + 1e-12)
    assert bound <= 2 * EPS ** (-1 / p) * (1 + 1.5 * EPS)


def test_choose_rank_exponents():
    assert choose_rank_for_p(0.25, 10**4) == math.ceil((10**4) ** 0.75)
    d = 10**6
    e = math.log(choose_rank_for_p(0.49, d)) / math.log(d)
    assert e == pytest.approx(2 / 3, abs=5e-3)
    assert choose_rank_for_p(0.1, 4) <= 2
    with pytest.raises(ContractViolation):
        choose_rank_for_p(0.5, 100)


def test_query_validation():
    for bad in (dict(p=0.0, epsilon=0.1), dict(p=2.5, epsilon=0.1), dict(p=1.5, epsilon=0.1, target="pd"),
                dict(p=1.0, epsilon=1.5), dict(p=1.0, epsilon=0.1, lambda_grid=(2.0, 1.0))):
        with pytest.raises(ContractViolation):
            SchattenQuery(**bad)
