"""Positive definite systems through an implicit dual chain of PSD sketches.

For ``M = A Aᵀ`` with an implicit factor ``A``, level ``t`` holds
``M_t = S_t M_{t-1} S_tᵀ`` (the Gram matrix of ``A_t = S_t A_{t-1}``) and
the cross term ``C_t = M_{t-1} S_tᵀ``.  Only these explicit matrices are used;
``A`` itself is never formed.  A regularized Nyström approximation of
``M_{t-1}`` built from ``(C_t, M_t)`` preconditions the step up a level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .chains import IllPosed, SpectrumHints, optimized_schedule
from .core import (
    PRACTICAL,
    ContractViolation,
    Settings,
    SolverHandle,
    apply,
    clamp_eps,
    dense,
    dense_solver,
    derive_seed,
    gram_matrix,
    op_sum,
    psd_explicit,
    ridge_identity,
    symmetrize,
)
from .iterative import (
    MatvecHandle,
    PagdConfig,
    estimate_spectral_norm,
    norm_upper_bound,
    pagd,
    pagd_solver,
    square_solver,
)
from .primal_dual import TesterVerdict, grid_search, tester_accuracy
from .sketching import SparseEmbedding, chain_embedding_plan, make_sparse_embedding
from .woodbury import WoodburyForm, woodbury_solve

DUAL_TESTER_THRESHOLD = 3.5
DUAL_TESTER_NORM_EPS = 1.0 / 7.0


# --------------------------------------------------------------------------
# types


@dataclass
class DualLevel:
    """``M`` (``s_t × s_t``), ``C = M_{t-1} Sᵀ`` (``s_{t-1} × s_t``), sketch and ``ν_t``."""

    M: np.ndarray
    C: np.ndarray
    S: SparseEmbedding
    nu: float


@dataclass
class DualPsdChain:
    """``(M_0, ν_0)`` followed by levels ``(M_t, C_t, S_t, ν_t)``.

    ``norm_bounds[t]`` bounds ``‖M_t‖`` from above.
    """

    M0: np.ndarray
    nu0: float
    levels: list[DualLevel]
    norm_bounds: list[float]

    @property
    def T(self) -> int:
        return len(self.levels)

    @property
    def nus(self) -> list[float]:
        return [self.nu0] + [lv.nu for lv in self.levels]

    def matrices(self) -> list[np.ndarray]:
        return [self.M0] + [lv.M for lv in self.levels]

    def with_nus(self, nus: list[float]) -> "DualPsdChain":
        if len(nus) != self.T + 1:
            raise ContractViolation(f"need {self.T + 1} regularization levels")
        levels = [replace(lv, nu=float(v)) for lv, v in zip(self.levels, nus[1:])]
        return DualPsdChain(self.M0, float(nus[0]), levels, list(self.norm_bounds))

    def subchain(self, start: int, nus: list[float]) -> "DualPsdChain":
        head = self.matrices()[start]
        return DualPsdChain(head, 0.0, self.levels[start:], self.norm_bounds[start:]).with_nus(nus)


def _shifted(M: np.ndarray, nu: float):
    return op_sum(psd_explicit(M), ridge_identity(M.shape[0], nu))


# --------------------------------------------------------------------------
# solvers


def nystrom_dual_reduction(
    M_prev: np.ndarray,
    C: np.ndarray,
    M_next: np.ndarray,
    nu: float,
    f: SolverHandle,
    epsilon: float,
    kappa: float,
) -> SolverHandle:
    """ε-solver for ``M_prev + νI`` from a ``1/20``-solver ``f`` for ``M_next + νI``.

    ``M_next = S M_prev Sᵀ`` and ``C = M_prev Sᵀ``; ``kappa ≥ 1 + ‖M_prev‖/ν``.
    With ``W_μ = M_next + μI`` the Nyström matrix ``N = C W_ν⁻¹ Cᵀ + νI``
    satisfies ``N ⪯ M_prev + νI ⪯ 5N``.  ``N`` is solved by Woodbury with inner
    matrix ``CᵀC + νW_ν``, which is in turn solved by PAGD preconditioned by
    ``16·W_{ν/2}²``; ``W_{ν/2}`` is solved by PAGD around ``f`` and squared.
    """
    if not nu > 0:
        raise ContractViolation("nu must be positive")
    M_prev = np.asarray(M_prev, dtype=float)
    M_next = np.asarray(M_next, dtype=float)
    C = np.asarray(C, dtype=float)
    if C.shape != (M_prev.shape[0], M_next.shape[0]):
        raise ContractViolation("cross term must have shape (dim M_prev, dim M_next)")
    if f.epsilon > 1.0 / 20.0 * (1 + 1e-9):
        raise ContractViolation("Nyström reduction needs a 1/20-solver")
    eps = clamp_eps(epsilon)
    s = M_next.shape[0]
    h = pagd_solver(_shifted(M_next, nu / 2.0), f, 2.0, 1.0 / (4e5 * kappa**2), "half-shift")
    h2 = square_solver(h, 8.0 * kappa, 1.0 / 640.0)
    C_op = dense(C)
    inner = psd_explicit(symmetrize(gram_matrix(C, nu * nu) + nu * M_next))
    g0 = pagd_solver(inner, h2.scaled(16.0), 64.0, 1.0 / (50.0 * kappa**2), "nystrom-inner")
    form = WoodburyForm(C_op, M_next, nu, kappa * nu)
    g = woodbury_solve(form, g0, 1.0 / 50.0)
    out = pagd_solver(_shifted(M_prev, nu), g.scaled(5.0), 5.0, eps, "nystrom-outer")
    out.description = f"nystrom({M_prev.shape[0]}<-{s})"
    return out


def dual_chain_solve(chain: DualPsdChain, bsolve: SolverHandle, epsilon: float) -> SolverHandle:
    """ε-solver for ``M_0 + ν_0I`` given a ``1/20``-solver for ``M_T + ν_TI``."""
    return _dual_solvers(chain, bsolve, epsilon)[0]


def _dual_solvers(chain: DualPsdChain, bsolve: SolverHandle, epsilon: float) -> list[SolverHandle]:
    T = chain.T
    nus = chain.nus
    if nus[0] <= 0 or any(b < a * (1 - 1e-12) for a, b in zip(nus, nus[1:])):
        raise ContractViolation("regularization levels must be positive and nondecreasing")
    eps = clamp_eps(epsilon)
    if T == 0:
        if bsolve.epsilon > eps * (1 + 1e-9):
            raise ContractViolation("base solver is less accurate than requested")
        return [bsolve]
    if bsolve.epsilon > 1.0 / 20.0 * (1 + 1e-9):
        raise ContractViolation("base solver accuracy must be at most 1/20")
    mats = chain.matrices()
    fs: list[SolverHandle] = [None] * (T + 1)  # type: ignore[list-item]
    fs[T] = bsolve
    for t in range(T, 0, -1):
        lv = chain.levels[t - 1]
        ratio = nus[t] / nus[t - 1]
        kap = 1.0 + chain.norm_bounds[t - 1] / nus[t]
        ft = nystrom_dual_reduction(mats[t - 1], lv.C, lv.M, nus[t], fs[t], 1.0 / (10.0 * ratio), kap)
        acc = eps if t == 1 else 1.0 / 20.0
        fs[t - 1] = pagd_solver(_shifted(mats[t - 1], nus[t - 1]), ft, ratio, acc, f"dual-level{t - 1}")
    return fs


def dense_base(chain: DualPsdChain) -> SolverHandle:
    """Exact factorization of ``M_T + ν_TI``."""
    M_T = chain.matrices()[-1]
    return dense_solver(M_T + chain.nus[-1] * np.eye(M_T.shape[0]), "dual-base")


# --------------------------------------------------------------------------
# implicit tester


def _implicit_matvec(M_a: np.ndarray, cross: np.ndarray, solver: SolverHandle, nu: float) -> MatvecHandle:
    """``x ↦ (M_a x - X·solver(Xᵀx))/ν + x`` with ``X = cross``."""

    def fn(x: np.ndarray) -> np.ndarray:
        return (M_a @ x - cross @ solver(cross.T @ x)) / nu + x

    return MatvecHandle(fn, solver.epsilon, M_a.shape[0], "implicit-sandwich")


def dual_tester(
    M_prev: np.ndarray,
    C: np.ndarray,
    M_next: np.ndarray,
    nu: float,
    f: SolverHandle,
    g: SolverHandle,
    seed: int,
    settings: Settings = PRACTICAL,
    delta: float = 0.01,
    kappa: float | None = None,
) -> TesterVerdict:
    """Compare the implicit ``AᵀA + νI`` and ``BᵀB + νI`` for ``B = SA``.

    Only ``M_prev = AAᵀ``, ``M_next = BBᵀ`` and ``C = ABᵀ`` are touched.
    ``f`` solves ``M_prev + νI`` and ``g`` solves ``M_next + νI``.  ``â``
    estimates ``‖A(BᵀB + νI)⁻¹Aᵀ + I‖`` through
    ``(M_prev - C g(Cᵀ·))/ν + I`` and ``b̂`` the mirror image, each to within
    ``8/7``; ``X = 1`` iff both are at most 3.5.
    """
    M_prev = np.asarray(M_prev, dtype=float)
    M_next = np.asarray(M_next, dtype=float)
    C = np.asarray(C, dtype=float)
    if not nu > 0:
        raise ContractViolation("nu must be positive")
    if C.shape != (M_prev.shape[0], M_next.shape[0]):
        raise ContractViolation("cross term must have shape (dim M_prev, dim M_next)")
    if kappa is None:
        kappa = 1.0 + norm_upper_bound(psd_explicit(M_prev), derive_seed(seed, "tester-norm"), trials=3) ** 0.5 / nu
    need = max(tester_accuracy(M_prev.shape[0], settings) / kappa**2, 1e-14)
    for name, sol in (("f", f), ("g", g)):
        if sol.epsilon > need * (1 + 1e-9):
            raise ContractViolation(f"tester solver {name} needs accuracy {need:.3g}, got {sol.epsilon:.3g}")
    a_hat = estimate_spectral_norm(
        _implicit_matvec(M_prev, C, g, nu), DUAL_TESTER_NORM_EPS, delta, derive_seed(seed, "dual-a"), settings
    )
    b_hat = estimate_spectral_norm(
        _implicit_matvec(M_next, C.T, f, nu), DUAL_TESTER_NORM_EPS, delta, derive_seed(seed, "dual-b"), settings
    )
    X = int(a_hat <= DUAL_TESTER_THRESHOLD and b_hat <= DUAL_TESTER_THRESHOLD)
    return TesterVerdict(X, a_hat, b_hat)


# --------------------------------------------------------------------------
# chain construction


def dual_alpha(d: int, kappa_tilde: float) -> float:
    """Schedule exponent ``log(8·10⁵·log³(160·d·κ̃))``."""
    return math.log(8e5 * math.log(160.0 * d * kappa_tilde) ** 3)


def _sketch_dual_levels(
    M: np.ndarray, ks: tuple[int, ...], delta: float, seed: int, settings: Settings
) -> list[DualLevel]:
    levels = []
    prev = M
    for t, kt in enumerate(ks, start=1):
        plan = chain_embedding_plan(2 * kt, 0.1, delta, settings, kt, settings.chain_rows_factor)
        S = make_sparse_embedding(plan, prev.shape[0], derive_seed(seed, "dual-sketch", t))
        C = S.apply_right_t(prev)  # M_{t-1} Sᵀ
        Mt = symmetrize(S.apply_left(C))
        levels.append(DualLevel(Mt, C, S, math.nan))
        prev = Mt
    return levels


def build_dual_chain(
    M,
    k: int,
    alpha: float,
    Lambda_tilde: float,
    lambda_tilde: float,
    delta: float,
    seed: int,
    settings: Settings = PRACTICAL,
    trace: list | None = None,
) -> DualPsdChain:
    """Dual chain on ``k_t = max(⌈d·e^{-αt²}⌉, 2k)`` with a ν halving search.

    ``Lambda_tilde ≈₂ (1/2k)Σ_{i>2k} λᵢ(M)`` and ``lambda_tilde ≈₂ λ_d(M)``;
    ``ν_T = 2Λ̃`` and ``ν_0 = λ̃``.  For ``t = T-1, …, 1`` candidates
    ``ν_T/2^i`` are tested with :func:`dual_tester` on the pair
    ``(M_{t-1}, M_t)`` and the last accepted candidate is kept.
    """
    M = np.asarray(M.to_dense() if hasattr(M, "to_dense") else M, dtype=float)
    d = M.shape[0]
    if not (Lambda_tilde > 0 and lambda_tilde > 0):
        raise IllPosed("regularization estimates must be positive")
    sched = optimized_schedule(d, k, alpha)
    levels = _sketch_dual_levels(M, sched.ks, delta, seed, settings)
    T = len(levels)
    nu0 = float(lambda_tilde)
    nuT = max(2.0 * float(Lambda_tilde), nu0)
    mats = [M] + [lv.M for lv in levels]
    bounds = [norm_upper_bound(psd_explicit(X), derive_seed(seed, "dual-norm", t)) ** 0.5 for t, X in enumerate(mats)]
    chain = DualPsdChain(M, nu0, levels, bounds).with_nus([nu0] + [nuT] * T)
    nus = chain.nus
    if trace is not None:
        trace.append(
            {"event": "dual-chain", "T": T, "ks": list(sched.ks), "dims": [int(X.shape[0]) for X in mats],
             "nu0": nu0, "nuT": nuT}
        )
    for t in range(T - 1, 0, -1):
        prev = nuT
        i = 1
        while True:
            cand = max(nuT / 2.0**i, nu0)
            temp = chain.subchain(t - 1, [cand, prev] + [max(nus[j], prev) for j in range(t + 1, T + 1)])
            kap = 1.0 + bounds[t - 1] / cand
            acc = max(tester_accuracy(mats[t - 1].shape[0], settings) / kap**2, 1e-14)
            fs = _dual_solvers(temp, dense_base(temp), acc)
            lv = chain.levels[t - 1]
            g = pagd_solver(_shifted(lv.M, cand), fs[1], 2.0, acc, "tester-gap")
            verdict = dual_tester(
                mats[t - 1], lv.C, lv.M, cand, fs[0], g, derive_seed(seed, "dual-test", t, i), settings, delta, kap
            )
            if trace is not None:
                trace.append({"event": "dual-test", "level": t, "nu": cand, "X": verdict.X,
                              "a_hat": verdict.a_hat, "b_hat": verdict.b_hat})
            if verdict.X == 1:
                prev = cand
                if cand <= nu0:
                    break
                i += 1
            else:
                break
        nus[t] = prev
        for j in range(t + 1, T + 1):
            nus[j] = max(nus[j], prev)
        if trace is not None:
            trace.append({"event": "dual-accept", "level": t, "nu": prev})
    return chain.with_nus(nus)


# --------------------------------------------------------------------------
# PD solve


def _pd_candidate(
    M: np.ndarray,
    b: np.ndarray,
    k: int,
    eps: float,
    Lambda_tilde: float,
    lambda_tilde: float,
    kappa_tilde: float,
    delta: float,
    seed: int,
    settings: Settings,
    trace: list | None,
) -> np.ndarray:
    d = M.shape[0]
    if not lambda_tilde > 0:
        raise IllPosed("smallest eigenvalue estimate must be positive")
    if 2 * k > d / 2:
        f0 = dense_solver(M + lambda_tilde * np.eye(d), "pd-direct")
    else:
        alpha = settings.alpha if settings.alpha is not None else dual_alpha(d, kappa_tilde)
        chain = build_dual_chain(M, k, alpha, Lambda_tilde, lambda_tilde, delta, seed, settings, trace)
        f0 = dual_chain_solve(chain, dense_base(chain), 1.0 / 40.0)
        if trace is not None:
            trace.append({"event": "dual-final", "nus": [float(v) for v in chain.nus]})
    # M ⪯ M + ν₀I ⪯ 4M
    return pagd(psd_explicit(M), f0, PagdConfig(4.0, eps * eps), b)


def shifted_solver(
    M,
    nu: float,
    epsilon: float,
    k: int,
    seed: int = 0,
    settings: Settings = PRACTICAL,
    delta: float = 0.01,
    direct_below: int = 512,
) -> SolverHandle:
    """ε-solver for ``M + νI`` (``M`` PSD) through a dual chain headed at ``ν``.

    Small problems (``d ≤ direct_below`` or ``2k > d/2``) are factored
    directly; otherwise ``Λ̃ = tr(M)/(2k)`` sets the chain bottom.
    """
    M = np.asarray(M.to_dense() if hasattr(M, "to_dense") else M, dtype=float)
    d = M.shape[0]
    eps = clamp_eps(epsilon)
    if not nu > 0:
        raise ContractViolation("nu must be positive")
    k = max(1, int(k))
    if d <= direct_below or 2 * k > d / 2:
        return dense_solver(M + nu * np.eye(d), "shifted-direct")
    tr = float(np.trace(M))
    alpha = settings.alpha if settings.alpha is not None else dual_alpha(d, 1.0 + tr / nu)
    chain = build_dual_chain(M, k, alpha, tr / (2 * k), nu, delta, seed, settings)
    return dual_chain_solve(chain, dense_base(chain), eps)


def pd_solve(
    M,
    b: np.ndarray,
    k: int,
    epsilon: float,
    seed: int = 0,
    spectrum_hints: SpectrumHints | None = None,
    settings: Settings = PRACTICAL,
    delta: float = 0.01,
    deadline: float | None = None,
    trace: list | None = None,
) -> np.ndarray:
    """Solve ``Mx = b`` for PD ``M`` with ``‖x̂ - x*‖_M ≤ ε‖x*‖_M`` (whp).

    With ``spectrum_hints`` (``Lambda`` and ``lambda_min`` in eigenvalue
    units, e.g. from :meth:`SpectrumHints.from_eigenvalues`) the estimates are
    used directly; otherwise ``(κ̃, λ̃, Λ̃)`` run over a log grid seeded by
    ``tr(M)`` and the candidate with the lowest energy ``xᵀMx - 2bᵀx`` wins.
    """
    M = np.asarray(M.to_dense() if hasattr(M, "to_dense") else M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
        raise ContractViolation("M must be a nonempty square matrix")
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12 * max(1.0, float(np.abs(M).max()))):
        raise ContractViolation("M must be symmetric")
    d = M.shape[0]
    b = np.asarray(b, dtype=float)
    if b.shape != (d,):
        raise ContractViolation(f"right-hand side must have shape ({d},)")
    if not 1 <= k <= d:
        raise ContractViolation(f"k={k} must lie in [1, d={d}]")
    eps = clamp_eps(epsilon)
    tr = float(np.trace(M))
    if not tr > 0:
        raise IllPosed("matrix trace must be positive")

    if spectrum_hints is not None:
        h = spectrum_hints
        if h.lambda_min is None or h.Lambda is None:
            raise ContractViolation("hints need lambda_min and Lambda")
        kt = h.kappa**2 if h.kappa is not None else tr / h.lambda_min
        return _pd_candidate(M, b, k, eps, h.Lambda, h.lambda_min, kt, delta, seed, settings, trace)

    M_op = psd_explicit(M)

    def energy(x: np.ndarray) -> float:
        return float(x @ apply(M_op, x) - 2.0 * (b @ x))

    return grid_search(
        lambda lam, Lam, kt: _pd_candidate(M, b, k, eps, Lam, lam, kt, delta, seed, settings, None),
        energy,
        tr,
        d,
        eps,
        deadline,
        trace,
    )
