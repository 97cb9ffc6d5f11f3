import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketchsolve.core import THEORY, PRACTICAL, ContractViolation, dense, dense_solver, gram_matrix, m_norm_error
from sketchsolve.woodbury import WoodburyForm, base_solver, woodbury_solve


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.floats(1e-3, 10.0), st.integers(0, 10**6))
def test_woodbury_matches_direct_inverse(n, d, nu, seed):
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((n, d))
    X = rng.standard_normal((d, d))
    W = X @ X.T + np.eye(d)
    M = C @ np.linalg.solve(W, C.T) + nu * np.eye(n)
    inner = dense_solver(C.T @ C + nu * W)
    form = WoodburyForm(dense(C), W, nu, np.linalg.norm(M, 2) * 1.01)
    b = rng.standard_normal(n)
    x = woodbury_solve(form, inner, 1e-3)(b)
    assert np.allclose(x, np.linalg.solve(M, b), rtol=1e-8, atol=1e-10 * np.linalg.norm(b) / nu)


def test_woodbury_inner_accuracy_is_enforced():
    form = WoodburyForm(dense(np.eye(2)), None, 1.0, 4.0)
    loose = dense_solver(2 * np.eye(2))
    loose.epsilon = 0.1
    with pytest.raises(ContractViolation):
        woodbury_solve(form, loose, 0.1)
    assert form.inner_accuracy(0.1) == pytest.approx(0.1 / 16)


@pytest.mark.parametrize("shape", [(8, 40), (40, 8), (30, 30)])
@pytest.mark.parametrize("settings_", [THEORY, PRACTICAL])
def test_base_solver_is_an_eps_solver(shape, settings_):
    rng = np.random.default_rng(sum(shape))
    A = rng.standard_normal(shape) * np.exp(rng.uniform(-2, 2, shape[1]))
    nu = 0.05
    f = base_solver(A, nu, 1e-8, 0.01, seed=3, settings=settings_)
    M = gram_matrix(A, nu)
    B = rng.standard_normal((shape[1], 3))
    assert m_norm_error(M, f(B), B) <= 1e-8


def test_base_solver_sketches_when_wide():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((20, 20000)) / np.sqrt(20000)
    f = base_solver(A, 1.0, 1e-6, 0.1, seed=0, settings=THEORY.with_(sketch_c_s=0.001))
    assert "base" in f.description
    b = rng.standard_normal(20000)
    x = f(b)
    r = A.T @ (A @ x) + x - b
    assert np.linalg.norm(r) <= 1e-2 * np.linalg.norm(b)


def test_base_solver_refuses_unreachable_accuracy():
    # ‖A‖² ≈ 2e4 with ν = 1 would need an inner accuracy below the float floor
    A = np.random.default_rng(2).standard_normal((20, 20000))
    with pytest.raises(ContractViolation):
        base_solver(A, 1.0, 1e-6, 0.1, seed=0, settings=THEORY.with_(sketch_c_s=0.001))
