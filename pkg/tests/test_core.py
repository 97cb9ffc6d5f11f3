import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketchsolve.core import (
    ContractViolation,
    NotPositiveDefinite,
    approx_factor,
    as_operator,
    cholesky,
    clamp_eps,
    counting,
    dense,
    dense_solver,
    derive_seed,
    from_callable,
    gram,
    gram_matrix,
    kappa_bar,
    m_norm_error,
    op_sum,
    product,
    psd_sqrt,
    ridge_identity,
    rng_for,
    scaled,
    spectral_ratio_bounds,
    tail_power_mean_bound,
    transpose,
)


def test_seed_derivation_is_deterministic_and_tag_sensitive():
    assert derive_seed(3, "a", 1) == derive_seed(3, "a", 1)
    assert derive_seed(3, "a", 1) != derive_seed(3, "a", 2)
    assert np.array_equal(rng_for(5, "x").standard_normal(4), rng_for(5, "x").standard_normal(4))


def test_operator_algebra_matches_dense():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((7, 4))
    B = rng.standard_normal((4, 3))
    v = rng.standard_normal((3, 2))
    w = rng.standard_normal((7, 2))
    P = product(dense(A), dense(B))
    assert np.allclose(P.apply(v), A @ B @ v)
    assert np.allclose(P.apply_adjoint(w), (A @ B).T @ w)
    G = gram(dense(A), 0.5)
    u = rng.standard_normal(4)
    assert np.allclose(G.apply(u), A.T @ A @ u + 0.5 * u)
    S = op_sum(scaled(gram(A), 2.0), ridge_identity(4, 3.0))
    assert np.allclose(S.to_dense(), 2 * A.T @ A + 3 * np.eye(4))
    assert np.allclose(transpose(dense(A)).to_dense(), A.T)
    C = from_callable(7, 4, lambda x: A @ x, lambda y: A.T @ y)
    assert np.allclose(C.to_dense(), A)


def test_work_is_counted_per_application():
    A = np.ones((5, 3))
    with counting() as wc:
        dense(A).apply(np.ones(3))
    assert wc.work == 15 and wc.applications == 1


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.diag([1.0, -1.0]))


def test_dense_solver_is_exact():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((10, 6))
    M = gram_matrix(A, 0.1)
    b = rng.standard_normal(6)
    f = dense_solver(M)
    assert f.epsilon == 0.0
    assert m_norm_error(M, f(b), b) < 1e-24


def test_approx_factor_and_ratio_bounds():
    M = np.diag([1.0, 2.0, 4.0])
    N = np.diag([2.0, 2.0, 2.0])
    assert spectral_ratio_bounds(M, N) == pytest.approx((0.5, 2.0))
    assert approx_factor(M, N) == pytest.approx(2.0)


def test_psd_sqrt_squares_back():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((5, 5))
    M = X @ X.T
    R = psd_sqrt(M)
    assert np.allclose(R @ R, M)


def test_clamp_eps_rejects_nonpositive():
    with pytest.raises(ContractViolation):
        clamp_eps(0.0)
    assert clamp_eps(1e-30) == 1e-14


def test_kappa_bar_values():
    s = [10.0, 4.0, 2.0, 1.0]
    assert kappa_bar(s, 3, 1.0) == pytest.approx(1.0)
    assert kappa_bar(s, 1, 1.0) == pytest.approx((4 + 2 + 1) / 3)
    assert kappa_bar(s, 1, math.inf) == pytest.approx(4.0)
    assert kappa_bar(s, 0, 2.0) == pytest.approx(math.sqrt((100 + 16 + 4 + 1) / 4))


spectra = st.lists(st.floats(1e-3, 1e3), min_size=2, max_size=30).map(lambda v: sorted(v, reverse=True))


@settings(max_examples=200, deadline=None)
@given(spectra, st.floats(0.1, 4.0), st.floats(0.1, 4.0))
def test_kappa_bar_monotone_in_p(s, p1, p2):
    lo, hi = sorted((p1, p2))
    k = len(s) // 2
    assert kappa_bar(s, k, lo) <= kappa_bar(s, k, hi) * (1 + 1e-12)


@settings(max_examples=200, deadline=None)
@given(spectra, st.floats(0.1, 0.95), st.data())
def test_tail_power_mean_bound_holds(lam, c, data):
    k = data.draw(st.integers(1, len(lam)))
    lhs, rhs = tail_power_mean_bound(lam, k, c)
    assert lhs <= rhs * (1 + 1e-10)


def test_as_operator_wraps_arrays():
    op = as_operator(np.eye(3))
    assert op.shape == (3, 3)
