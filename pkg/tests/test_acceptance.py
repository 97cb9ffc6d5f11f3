"""End-to-end acceptance criteria, one test per criterion.

Each test records its measured quantities through ``conftest.report`` and
the terminal summary prints a PASS/FAIL line per criterion.  Run alone with
``python3 tests/test_acceptance.py`` or ``pytest -m acceptance``.
"""

import math

import numpy as np
import pytest

from sketchsolve import harness as H
from sketchsolve.chains import SpectrumHints, regression_solve_warmup
from sketchsolve.core import (
    THEORY,
    PRACTICAL,
    approx_factor,
    dense,
    dense_solver,
    gram_matrix,
    kappa_bar,
    relative_gen_eigs,
    tail_power_mean_bound,
)
from sketchsolve.iterative import pagd_audit, pagd_totals, square_solver
from sketchsolve.pd_solver import pd_solve
from sketchsolve.primal_dual import regression_solve
from sketchsolve.sketching import EmbeddingPlan, regularized_embed, tail_sum
from sketchsolve.woodbury import WoodburyForm, woodbury_solve

from conftest import report

pytestmark = pytest.mark.acceptance

EPS_SOLVE = 1e-6
INSTANCES = 50


def _ls_instance(i):
    d = (64, 128, 256)[i % 3]
    k = d // 32
    A, s = H.generate(H.InstanceSpec(2 * d, d, f"step:{k}:100", 1000 + i))
    b = np.random.default_rng(i).standard_normal(2 * d)
    return A, s, b, k


def _pd_instance(i):
    d = (32, 64, 128)[i % 3]
    k = d // 16
    M, lam = H.generate(H.InstanceSpec(d, d, f"step:{k}:100", 2000 + i, pd=True))
    b = np.random.default_rng(i).standard_normal(d)
    return M, lam, b, k


def test_criterion_1_solver_contracts():
    fails = {"warmup": 0, "primal-dual": 0, "pd": 0}
    worst = dict.fromkeys(fails, 0.0)
    for i in range(INSTANCES):
        A, s, b, k = _ls_instance(i)
        hints = SpectrumHints.from_singular_values(s, k)
        errs = {
            "warmup": H.regression_error(A, b, regression_solve_warmup(A, b, k, EPS_SOLVE, "optimized", hints, i,
                                                                         PRACTICAL)),
            "primal-dual": H.regression_error(A, b, regression_solve(A, b, k, EPS_SOLVE, i, hints, PRACTICAL)),
        }
        M, lam, c, kp = _pd_instance(i)
        errs["pd"] = H.pd_error(M, c, pd_solve(M, c, kp, EPS_SOLVE, i, SpectrumHints.from_eigenvalues(lam, kp),
                                               PRACTICAL))
        for name, e in errs.items():
            fails[name] += int(not e <= EPS_SOLVE)
            worst[name] = max(worst[name], e)
    detail = ", ".join(f"{n} {fails[n]}/{INSTANCES} failures (worst {worst[n]:.2e})" for n in fails)
    report(1, "solver contracts at eps=1e-6", detail)
    assert all(f <= 2 for f in fails.values()), detail


def test_criterion_2_pagd_budget():
    # every test also runs under the autouse cap guard in conftest
    rng = np.random.default_rng(0)
    A, s = H.generate(H.InstanceSpec(256, 64, "step:2:100", 3))
    b = rng.standard_normal(256)
    with pagd_audit() as recs:
        regression_solve(A, b, 2, EPS_SOLVE, 0, SpectrumHints.from_singular_values(s, 2), PRACTICAL)
    over = [r for r in recs if r.precond_applications > r.cap or r.operator_applications > r.cap]
    caps_ok = all(r.cap == math.ceil(4 * math.sqrt(r.kappa) * math.log(2 / r.epsilon)) for r in recs)
    totals = pagd_totals()
    detail = (f"{len(recs)} audited runs, {len(over)} over cap, caps match formula: {caps_ok}; "
              f"session so far {totals['calls']} runs, {totals['over_cap']} over cap")
    report(2, "PAGD application budget", detail)
    assert recs and not over and caps_ok and totals["over_cap"] == 0, detail


def test_criterion_3_embedding_guarantee():
    eps, delta, d, seeds = 0.1, 0.1, 128, 100
    parts, ok = [], True
    for k in (1, 4, 16):
        s_rows = EmbeddingPlan.from_settings(2 * k, eps, delta, THEORY).rows_for(10**9)
        n = math.ceil(1.25 * s_rows)
        A, sig = H.generate(H.InstanceSpec(n, d, f"step:{k}:100", 300 + k))
        nu = tail_sum(sig, k)
        G = gram_matrix(A, nu)
        passed, worst = 0, 0.0
        for seed in range(seeds):
            SA, _ = regularized_embed(A, k, eps, delta, seed, THEORY)
            f = approx_factor(gram_matrix(SA, nu), G)
            passed += int(f <= 1 + 6 * eps)
            worst = max(worst, f)
        parts.append(f"k={k}: {passed}/{seeds} (rows {s_rows} of n={n}, worst factor {worst:.3f})")
        ok &= passed >= 90
    detail = "; ".join(parts)
    report(3, "regularized embedding within 1+6eps", detail)
    assert ok, detail


def test_criterion_4_tester_soundness():
    tallies = H.tester_soundness(200, 16, 0, THEORY)
    total = sum(t.violations for t in tallies.values())
    detail = "; ".join(
        f"{n}: {t.trials} trials, {t.confirmed2} oracle-confirmed ≈2, {t.refuted4} oracle-refuted ≈4, "
        f"{t.false_reject} false rejects, {t.false_accept} false accepts"
        for n, t in tallies.items()
    ) + f"; total exceptions {total}"
    report(4, "tester soundness", detail)
    assert total <= 2, detail


def test_criterion_5_scaling_exponents():
    dims = (256, 512, 1024)
    recs_ls, e_ls = H.scaling_regression(dims, 8, EPS_SOLVE, 0)
    recs_pd, e_pd = H.scaling_pd(dims, 8, EPS_SOLVE, 0)
    errors_ok = all(r.error <= EPS_SOLVE for r in recs_ls + recs_pd)

    def fmt(recs):
        return ", ".join(f"d={r.extra['d']}: work {r.work:.3g}" for r in recs)

    detail = (f"regression exponent {e_ls:.2f} ({fmt(recs_ls)}); pd exponent {e_pd:.2f} ({fmt(recs_pd)}); "
              f"all errors within eps: {errors_ok}")
    report(5, "work scaling exponent <= 2.3", detail)
    assert e_ls <= 2.3 and e_pd <= 2.3 and errors_ok, detail


def test_criterion_6_nuclear_norm():
    res = H.nuclear_accuracy(100, 100, 0.1, 0)
    counts = {fam: int(np.sum(np.abs(np.asarray(r) - 1) <= 0.15)) for fam, r in res.items()}
    detail = ", ".join(f"{fam} {c}/100 (worst |ratio-1| {np.max(np.abs(np.asarray(res[fam]) - 1)):.3f})"
                       for fam, c in counts.items())
    report(6, "nuclear norm within 1±0.15", detail)
    assert all(c >= 90 for c in counts.values()), detail


def _woodbury_case(rng):
    n, d = rng.integers(1, 15, size=2)
    C = rng.standard_normal((n, d)) * np.exp(rng.uniform(-2, 2))
    X = rng.standard_normal((d, d))
    W = X @ X.T + np.exp(rng.uniform(-3, 1)) * np.eye(d)
    nu = float(np.exp(rng.uniform(-3, 2)))
    M = C @ np.linalg.solve(W, C.T) + nu * np.eye(n)
    form = WoodburyForm(dense(C), W, nu, np.linalg.norm(M, 2) * 1.01)
    b = rng.standard_normal(n)
    x = woodbury_solve(form, dense_solver(C.T @ C + nu * W), 1e-3)(b)
    ref = np.linalg.solve(M, b)
    return np.linalg.norm(x - ref) / np.linalg.norm(ref)


def _nystrom_case(rng):
    d = int(rng.integers(2, 12))
    s = int(rng.integers(d, 4 * d + 1))
    Q, _ = np.linalg.qr(rng.standard_normal((s, d)))
    r = np.exp(rng.uniform(math.log(0.5), math.log(2.0), s))
    S = r[:, None] * Q  # SᵀS = QᵀD²Q lies between I/4 and 4I, so the ≈₄ precondition holds
    lam = np.exp(rng.uniform(-4, 2, d))
    U, _ = np.linalg.qr(rng.standard_normal((d, d)))
    Mp = (U * lam) @ U.T
    Mp = (Mp + Mp.T) / 2
    nu = float(lam.max() * 10 ** rng.uniform(-4, 0))
    Mn = S @ Mp @ S.T
    C = Mp @ S.T
    N = C @ np.linalg.solve(Mn + nu * np.eye(s), C.T) + nu * np.eye(d)
    ev = relative_gen_eigs(Mp + nu * np.eye(d), N)
    return max(0.0, 1 - ev.min(), ev.max() / 5 - 1)


def _square_case(rng):
    d = int(rng.integers(1, 12))
    B = rng.standard_normal((d, d))
    Mm = B @ B.T + np.exp(rng.uniform(-2, 1)) * np.eye(d)
    f = dense_solver(Mm)
    g = square_solver(f, float(np.linalg.cond(Mm)), 1e-8)
    b = rng.standard_normal(d)
    ref = np.linalg.solve(Mm @ Mm, b)
    return np.linalg.norm(g(b) - ref) / np.linalg.norm(ref)


def _mean_case(rng):
    d = int(rng.integers(2, 40))
    vals = np.sort(np.exp(rng.uniform(-6, 6, d)))[::-1]
    k = int(rng.integers(1, d))
    c = float(rng.uniform(0.02, 0.999))
    lhs, rhs = tail_power_mean_bound(vals, k, c)
    return max(0.0, lhs / rhs - 1)


def test_criterion_7_algebraic_identities():
    rng = np.random.default_rng(7)
    suites = {"woodbury": _woodbury_case, "nystrom sandwich": _nystrom_case, "square solver": _square_case,
              "generalized mean": _mean_case}
    parts, ok = [], True
    for name, case in suites.items():
        errs = np.array([case(rng) for _ in range(1000)])
        bad = int(np.sum(errs > 1e-8))
        parts.append(f"{name} {1000 - bad}/1000 (max rel. deviation {errs.max():.1e})")
        ok &= bad == 0
    detail = "; ".join(parts)
    report(7, "algebraic identities at 1e-8", detail)
    assert ok, detail


def test_criterion_8_condition_number_identity():
    rng = np.random.default_rng(8)
    worst_id, worst_mono = 0.0, 0.0
    for _ in range(1000):
        d = int(rng.integers(2, 60))
        s = np.sort(np.exp(rng.uniform(-5, 5, d)))[::-1]
        k = int(rng.integers(0, d))
        p = float(rng.uniform(0.1, 8.0))
        lhs = kappa_bar(s, k, p)
        rhs = math.sqrt(kappa_bar(s**2, k, p / 2))  # AAᵀ has singular values σ²
        worst_id = max(worst_id, abs(lhs / rhs - 1))
        ps = np.sort(rng.uniform(0.1, 8.0, 6))
        vals = [kappa_bar(s, k, q) for q in ps] + [kappa_bar(s, k, math.inf)]
        worst_mono = max(worst_mono, max(0.0, max(a / b - 1 for a, b in zip(vals, vals[1:]))))
    detail = f"max identity deviation {worst_id:.1e}, max monotonicity violation {worst_mono:.1e} over 1000 spectra"
    report(8, "averaged condition number identity and monotonicity", detail)
    assert worst_id <= 1e-12 and worst_mono <= 1e-12, detail


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
