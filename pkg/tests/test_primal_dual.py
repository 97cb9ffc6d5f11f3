import numpy as np
import pytest

from sketchsolve.chains import SpectrumHints
from sketchsolve.core import THEORY, PRACTICAL, ContractViolation, EPS_FLOOR, dense_solver, gram_matrix, m_norm_error
from sketchsolve.harness import primal_dual_tester_trial, regression_error
from sketchsolve.primal_dual import (
    TESTER_THRESHOLD,
    dual_reduction,
    grid_search,
    regression_solve,
    ridge_solver,
    spectral_tester,
    tester_accuracy as accuracy_for_testers,
)

from conftest import step_matrix


def test_tester_accuracy_clamp():
    assert accuracy_for_testers(2, THEORY) == pytest.approx(1 / 640)
    assert accuracy_for_testers(100, THEORY) == pytest.approx(1e-12)
    assert accuracy_for_testers(10**6, THEORY) == EPS_FLOOR


def test_tester_accepts_identical_and_rejects_far():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((40, 12))
    nu = 0.1
    M = gram_matrix(A, nu)
    same = spectral_tester(A, A, nu, dense_solver(M), 1, dense_solver(M), THEORY)
    assert same.X == 1 and same.a_hat <= TESTER_THRESHOLD and same.b_hat <= TESTER_THRESHOLD
    B = 2.5 * A  # BᵀB = 6.25·AᵀA, far outside ≈₂ once AᵀA dominates ν
    far = spectral_tester(A, B, nu, dense_solver(M), 1, dense_solver(gram_matrix(B, nu)), THEORY)
    assert far.X == 0


def test_tester_builds_dual_solver_itself():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((30, 8))
    B = A * rng.uniform(0.9, 1.1, 30)[:, None]
    nu = 0.5
    v = spectral_tester(A, B, nu, dense_solver(gram_matrix(A, nu)), 3, settings=THEORY)
    assert v.X == 1


def test_tester_rejects_loose_solver():
    A = np.eye(4)
    loose = dense_solver(gram_matrix(A, 1.0))
    loose.epsilon = 0.1
    with pytest.raises(ContractViolation):
        spectral_tester(A, A, 1.0, loose, 0, settings=THEORY)


@pytest.mark.parametrize("seed", range(6))
def test_tester_trials_are_sound(seed):
    factor, X = primal_dual_tester_trial(12, seed)
    if factor <= 2:
        assert X == 1
    if factor > 4:
        assert X == 0


def test_dual_reduction_solves_column_side():
    rng = np.random.default_rng(2)
    B = rng.standard_normal((25, 7)) / 5.0
    A = B * rng.uniform(0.9, 1.1, 25)[:, None]  # row-side matrices agree to ≈4
    nu = 1.0
    kappa = 1 + np.linalg.norm(A, 2) ** 2 / nu
    g = dual_reduction(A, B, nu, dense_solver(gram_matrix(A, nu)), 1e-4, kappa)
    rhs = rng.standard_normal(7)
    assert m_norm_error(gram_matrix(B, nu), g(rhs), rhs) <= 1e-4


def test_ridge_solver_direct_and_chain():
    A, _ = step_matrix(300, 64, 2, seed=3)
    rng = np.random.default_rng(0)
    rhs = rng.standard_normal(64)
    for below in (512, 16):
        f = ridge_solver(A, 0.5, 1e-8, 2, seed=1, direct_below=below)
        assert m_norm_error(gram_matrix(A, 0.5), f(rhs), rhs) <= 1e-8


@pytest.mark.parametrize("settings_", [PRACTICAL, THEORY.with_(chain_rows_factor=4.0, chain_cols_factor=4.0)])
def test_regression_with_hints(settings_):
    A, s = step_matrix(128, 32, 2, seed=5)
    b = np.random.default_rng(1).standard_normal(128)
    x = regression_solve(A, b, 2, 1e-6, 2, SpectrumHints.from_singular_values(s, 2), settings_)
    assert regression_error(A, b, x) <= 1e-6


def test_regression_grid_search():
    # 2k > d/2, so candidates use the direct base solver and only the grid is exercised
    A, _ = step_matrix(64, 16, 5, seed=6)
    b = np.random.default_rng(2).standard_normal(64)
    trace = []
    x = regression_solve(A, b, 5, 1e-6, 0, trace=trace)
    assert any(ev["event"] == "grid" for ev in trace)
    assert regression_error(A, b, x) <= 1e-6


def test_regression_contract_checks():
    A = np.ones((4, 2))
    with pytest.raises(ContractViolation):
        regression_solve(A, np.ones(3), 1, 0.1)
    with pytest.raises(ContractViolation):
        regression_solve(A, np.ones(4), 3, 0.1)


def test_grid_search_stops_without_improvement():
    calls = []

    def solve(lam, Lam, kt):
        calls.append(kt)
        return np.array([1.0])

    x = grid_search(solve, lambda x: 1.0, 64.0, 4, 1e-3, None, None)
    assert x[0] == 1.0
    # two rounds of κ̃ = 2, 4
    assert len({round(c, 9) for c in calls}) == 2
