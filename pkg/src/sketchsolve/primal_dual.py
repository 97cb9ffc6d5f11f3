"""Alternating primal-dual regression with two-sided sketch chains.

Each level ``t`` holds ``B_t = S_t·A_0·Π_{t-1}ᵀ`` and ``A_t = B_t·P_tᵀ`` where
``S_t`` is a fresh left sketch of ``A_0`` and ``P_t`` right-sketches the
previous column space (``Π_t = P_t⋯P_1``).  Going down a level the solver
crosses a ν-gap with PAGD on the column side and a dimension change by
passing through the row side with two Woodbury conversions.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .chains import IllPosed, SpectrumHints, optimized_schedule
from .core import (
    EPS_FLOOR,
    PRACTICAL,
    ContractViolation,
    Settings,
    SolverHandle,
    apply,
    apply_adjoint,
    as_operator,
    clamp_eps,
    dense,
    derive_seed,
    gram,
)
from .iterative import MatvecHandle, PagdConfig, estimate_spectral_norm, norm_upper_bound, pagd, pagd_solver
from .sketching import SparseEmbedding, chain_embedding_plan, make_sparse_embedding, regularized_embed
from .woodbury import WoodburyForm, base_solver, woodbury_solve

TESTER_THRESHOLD = 3.0
TESTER_NORM_EPS = 1.0 / 3.0


# --------------------------------------------------------------------------
# types


@dataclass
class PrimalDualLevel:
    """One chain level: ``B`` (``s_t × d_{t-1}``), ``A`` (``s_t × d_t``), ``ν_t``."""

    A: np.ndarray
    B: np.ndarray
    nu: float
    left: SparseEmbedding
    right: SparseEmbedding


@dataclass
class PrimalDualChain:
    """Head ``(A_0, ν_0)`` and levels ``(A_t, B_t, ν_t)`` for ``t = 1..T``.

    ``norm_sq_bounds[t]`` is an upper bound on ``‖A_t‖²`` used for the
    condition surrogates ``κ_t = 1 + ‖A_t‖²/ν_t``.
    """

    A0: np.ndarray
    nu0: float
    levels: list[PrimalDualLevel]
    norm_sq_bounds: list[float] = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.levels)

    @property
    def nus(self) -> list[float]:
        return [self.nu0] + [lv.nu for lv in self.levels]

    def matrices(self) -> list[np.ndarray]:
        return [self.A0] + [lv.A for lv in self.levels]

    def kappas(self) -> list[float]:
        return [1.0 + ub / nu for ub, nu in zip(self.norm_sq_bounds, self.nus)]

    def with_nus(self, nus: list[float]) -> "PrimalDualChain":
        if len(nus) != self.T + 1:
            raise ContractViolation(f"need {self.T + 1} regularization levels")
        levels = [replace(lv, nu=float(v)) for lv, v in zip(self.levels, nus[1:])]
        return PrimalDualChain(self.A0, float(nus[0]), levels, list(self.norm_sq_bounds))

    def subchain(self, start: int, nus: list[float]) -> "PrimalDualChain":
        """Chain whose head is level ``start`` of this one, with new ``ν`` values."""
        head = self.matrices()[start]
        sub = PrimalDualChain(head, 0.0, self.levels[start:], self.norm_sq_bounds[start:])
        return sub.with_nus(nus)


@dataclass(frozen=True)
class TesterVerdict:
    """``X = 1`` certifies ``≈₄``; ``X = 0`` certifies failure of ``≈₂``."""

    X: int
    a_hat: float
    b_hat: float


def _validate_nus(nus: list[float]) -> None:
    if nus[0] <= 0:
        raise ContractViolation("regularization levels must be positive")
    if any(b < a * (1 - 1e-12) for a, b in zip(nus, nus[1:])):
        raise ContractViolation("regularization levels must be nondecreasing")


# --------------------------------------------------------------------------
# solvers


def dual_reduction(
    A: np.ndarray,
    B: np.ndarray,
    nu: float,
    f: SolverHandle,
    epsilon: float,
    kappa: float,
) -> SolverHandle:
    """Turn a solver for ``AᵀA + νI`` into an ε-solver for ``BᵀB + νI``.

    ``A`` and ``B`` share their row count and must satisfy
    ``AAᵀ + νI ≈₄ BBᵀ + νI``; ``kappa ≥ 1 + ‖A‖²/ν``.  ``f`` needs accuracy
    ``1/(160κ²)``.  The row-side matrix ``AAᵀ + νI`` is solved through
    Woodbury, preconditions PAGD on ``BBᵀ + νI`` (``κ = 16``), and a second
    Woodbury step returns to the column side of ``B``.
    """
    if not nu > 0:
        raise ContractViolation("nu must be positive")
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[0] != B.shape[0]:
        raise ContractViolation("A and B must have the same number of rows")
    if kappa < 1:
        raise ContractViolation("kappa must be at least 1")
    eps = clamp_eps(epsilon)
    row_form = WoodburyForm(dense(A), None, nu, kappa * nu)
    g = woodbury_solve(row_form, f, 1.0 / 160.0)
    g.target = gram(dense(A.T), nu)
    col_form = WoodburyForm(dense(B.T), None, nu, 4.0 * kappa * nu)
    h = pagd_solver(gram(dense(B.T), nu), g.scaled(4.0), 16.0, col_form.inner_accuracy(eps), "dual-rows")
    out = woodbury_solve(col_form, h, eps)
    out.target = gram(dense(B), nu)
    out.description = f"dual-reduction({B.shape[1]}<-{A.shape[1]})"
    return out


def _chain_solvers(
    chain: PrimalDualChain, bsolve: SolverHandle, epsilon: float
) -> tuple[list[SolverHandle], list[SolverHandle | None]]:
    """Solvers ``f_t`` for every level and the dual reductions ``g_t`` between them."""
    T = chain.T
    nus = chain.nus
    _validate_nus(nus)
    eps = clamp_eps(epsilon)
    if T == 0:
        if bsolve.epsilon > eps * (1 + 1e-9):
            raise ContractViolation("base solver is less accurate than requested")
        return [bsolve], [None]
    kap = chain.kappas()
    if bsolve.epsilon > 1.0 / (160.0 * kap[T] ** 2) * (1 + 1e-9):
        raise ContractViolation("base solver accuracy must be at most 1/(160κ_T²)")
    mats = chain.matrices()
    fs: list[SolverHandle | None] = [None] * (T + 1)
    gs: list[SolverHandle | None] = [None] * (T + 1)
    fs[T] = bsolve
    for t in range(T, 0, -1):
        lv = chain.levels[t - 1]
        g = dual_reduction(lv.A, lv.B, nus[t], fs[t], nus[t - 1] / (160.0 * nus[t]), kap[t])
        acc = eps if t == 1 else 1.0 / (160.0 * kap[t - 1] ** 2)
        fs[t - 1] = pagd_solver(
            gram(dense(mats[t - 1]), nus[t - 1]), g.scaled(4.0), 16.0 * nus[t] / nus[t - 1], acc, f"pd-level{t - 1}"
        )
        gs[t] = g
    return fs, gs


def pd_chain_solve(chain: PrimalDualChain, bsolve: SolverHandle, epsilon: float) -> SolverHandle:
    """ε-solver for ``A_0ᵀA_0 + ν_0I`` from a solver for the last level.

    ``bsolve`` solves ``A_TᵀA_T + ν_TI`` to accuracy ``1/(160κ_T²)``.
    """
    return _chain_solvers(chain, bsolve, epsilon)[0][0]


def chain_base(chain: PrimalDualChain, delta: float, seed: int, settings: Settings) -> SolverHandle:
    """Base solver for the last level at the accuracy :func:`pd_chain_solve` needs."""
    A_T = chain.matrices()[-1]
    nu_T = chain.nus[-1]
    acc = 1.0 / (160.0 * chain.kappas()[-1] ** 2) if chain.T else 0.1
    return base_solver(A_T, nu_T, acc, delta, seed, settings)


# --------------------------------------------------------------------------
# runtime spectral test


def tester_accuracy(d: int, settings: Settings) -> float:
    """Solver accuracy ``d^-e`` the testers ask for, kept within ``[EPS_FLOOR, 1/640]``."""
    return max(min(float(d) ** -settings.tester_accuracy_exponent, 1.0 / 640.0), EPS_FLOOR)


def _sandwich_matvec(C: np.ndarray, nu: float, solver: SolverHandle) -> MatvecHandle:
    """``x ↦ C_ν·solver(C_νᵀx)`` with ``C_ν = [C; √ν·I]``."""
    n, d = C.shape
    rn = math.sqrt(nu)

    def fn(x: np.ndarray) -> np.ndarray:
        top, bot = x[:n], x[n:]
        y = solver(C.T @ top + rn * bot)
        return np.concatenate([C @ y, rn * y], axis=0)

    return MatvecHandle(fn, solver.epsilon, n + d, "sandwich")


def spectral_tester(
    A: np.ndarray,
    B: np.ndarray,
    nu: float,
    f: SolverHandle,
    seed: int,
    g: SolverHandle | None = None,
    settings: Settings = PRACTICAL,
    delta: float = 0.01,
) -> TesterVerdict:
    """Decide between ``AᵀA + νI ≈₄ BᵀB + νI`` and not ``≈₂``.

    Requires ``≈₈`` and a solver ``f`` for ``M = AᵀA + νI`` at accuracy
    ``d^-e`` (``e`` from ``settings``).  ``â`` estimates ``‖A_ν N⁻¹ A_νᵀ‖`` and
    ``b̂`` estimates ``‖B_ν M⁻¹ B_νᵀ‖`` to within ``4/3``, where
    ``N = BᵀB + νI``; ``X = 1`` iff both are at most 3.  A solver ``g`` for
    ``N`` is built from ``f`` when not supplied.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[1] != B.shape[1]:
        raise ContractViolation("A and B must share the column dimension")
    if not nu > 0:
        raise ContractViolation("nu must be positive")
    need = tester_accuracy(A.shape[1], settings)
    if f.epsilon > need * (1 + 1e-9):
        raise ContractViolation(f"tester needs solver accuracy {need:.3g}, got {f.epsilon:.3g}")
    if g is None:
        g = pagd_solver(gram(dense(B), nu), f.scaled(8.0), 64.0, need, "tester-dual")
    elif g.epsilon > need * (1 + 1e-9):
        raise ContractViolation(f"tester needs solver accuracy {need:.3g}, got {g.epsilon:.3g}")
    a_hat = estimate_spectral_norm(
        _sandwich_matvec(A, nu, g), TESTER_NORM_EPS, delta, derive_seed(seed, "tester-a"), settings
    )
    b_hat = estimate_spectral_norm(
        _sandwich_matvec(B, nu, f), TESTER_NORM_EPS, delta, derive_seed(seed, "tester-b"), settings
    )
    X = int(a_hat <= TESTER_THRESHOLD and b_hat <= TESTER_THRESHOLD)
    return TesterVerdict(X, a_hat, b_hat)


# --------------------------------------------------------------------------
# chain construction


def primal_dual_alpha(d: int, kappa_tilde: float) -> float:
    """Schedule exponent ``log(10³·log²(80·36·d·κ̃²))``."""
    return math.log(1e3 * math.log(80.0 * 36.0 * d * kappa_tilde**2) ** 2)


def _sketch_levels(
    A0: np.ndarray, ks: tuple[int, ...], delta: float, seed: int, settings: Settings
) -> list[PrimalDualLevel]:
    n = A0.shape[0]
    Y = A0  # A_0·Π_{t-1}ᵀ
    levels = []
    for t, kt in enumerate(ks, start=1):
        splan = chain_embedding_plan(2 * kt, 0.1, delta, settings, kt, settings.chain_rows_factor)
        S = make_sparse_embedding(splan, n, derive_seed(seed, "pd-left", t))
        B = S.apply_left(Y)
        s_t = B.shape[0]
        pplan = chain_embedding_plan(s_t, 0.25, delta, settings, s_t, settings.chain_cols_factor)
        P = make_sparse_embedding(pplan, Y.shape[1], derive_seed(seed, "pd-right", t))
        Y = P.apply_right_t(Y)
        levels.append(PrimalDualLevel(P.apply_right_t(B), B, math.nan, S, P))
    return levels


def build_primal_dual_chain(
    A,
    k: int,
    alpha: float,
    Lambda_tilde: float,
    lambda_tilde: float,
    delta: float,
    seed: int,
    settings: Settings = PRACTICAL,
    trace: list | None = None,
) -> PrimalDualChain:
    """Two-sided chain with ν levels found by a downward halving search.

    ``Lambda_tilde ≈₂ tail_sum(σ, 2k)`` and ``lambda_tilde ≈₂ σ_d²``.  The last
    level is fixed at ``ν_T = 4Λ̃`` and the head at ``ν_0 = λ̃``.  For
    ``t = T-1, …, 1`` candidates ``ν_T/2, ν_T/4, …`` (ending at ``ν_0``) are
    tested on the pair ``(A_{t-1}, B_t)``; ``ν_t`` is the last candidate the
    tester accepts.  Solvers for the tester come from a temporary chain that
    uses the candidate at level ``t-1`` and the last accepted value at ``t``.
    """
    A0 = A.to_dense() if hasattr(A, "to_dense") else np.asarray(A, dtype=float)
    d = A0.shape[1]
    if not (Lambda_tilde > 0 and lambda_tilde > 0):
        raise IllPosed("regularization estimates must be positive")
    sched = optimized_schedule(d, k, alpha)
    levels = _sketch_levels(A0, sched.ks, delta, seed, settings)
    T = len(levels)
    nu0 = float(lambda_tilde)
    nuT = max(4.0 * float(Lambda_tilde), nu0)
    mats = [A0] + [lv.A for lv in levels]
    bounds = [norm_upper_bound(dense(M), derive_seed(seed, "pd-norm", t)) for t, M in enumerate(mats)]
    chain = PrimalDualChain(A0, nu0, levels, bounds).with_nus([nu0] + [nuT] * T)
    nus = chain.nus
    if trace is not None:
        trace.append(
            {
                "event": "pd-chain",
                "T": T,
                "ks": list(sched.ks),
                "shapes": [list(M.shape) for M in mats],
                "nu0": nu0,
                "nuT": nuT,
            }
        )
    for t in range(T - 1, 0, -1):
        prev = nuT
        i = 1
        while True:
            cand = max(nuT / 2.0**i, nu0)
            temp_nus = [cand, prev] + [max(nus[j], prev) for j in range(t + 1, T + 1)]
            sub = chain.subchain(t - 1, temp_nus)
            dim = sub.A0.shape[1]
            acc = tester_accuracy(dim, settings)
            base = chain_base(sub, delta, derive_seed(seed, "pd-base", t, i), settings)
            fs, gs = _chain_solvers(sub, base, acc)
            lv = chain.levels[t - 1]
            gN = pagd_solver(gram(dense(lv.B), cand), gs[1], 2.0, acc, "tester-gap")
            verdict = spectral_tester(sub.A0, lv.B, cand, fs[0], derive_seed(seed, "pd-test", t, i), gN, settings, delta)
            if trace is not None:
                trace.append(
                    {"event": "pd-test", "level": t, "nu": cand, "X": verdict.X,
                     "a_hat": verdict.a_hat, "b_hat": verdict.b_hat}
                )
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
            trace.append({"event": "pd-accept", "level": t, "nu": prev})
    return chain.with_nus(nus)


# --------------------------------------------------------------------------
# regression


def _ls_loss(A, x: np.ndarray, b: np.ndarray) -> float:
    r = apply(A, x) - b
    return float(r @ r)


def _candidate(
    A,
    Atil: np.ndarray,
    rhs: np.ndarray,
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
    d = Atil.shape[1]
    if not lambda_tilde > 0:
        raise IllPosed("smallest singular value estimate must be positive")
    if 2 * k > d / 2:
        f0 = base_solver(Atil, lambda_tilde, 1.0 / 80.0, delta, derive_seed(seed, "pd-direct"), settings)
    else:
        alpha = settings.alpha if settings.alpha is not None else primal_dual_alpha(d, kappa_tilde)
        chain = build_primal_dual_chain(
            Atil, k, alpha, Lambda_tilde, lambda_tilde, delta, seed, settings, trace
        )
        base = chain_base(chain, delta, derive_seed(seed, "pd-base"), settings)
        f0 = pd_chain_solve(chain, base, 1.0 / 80.0)
        if trace is not None:
            trace.append({"event": "pd-final", "nus": [float(v) for v in chain.nus]})
    # AᵀA ⪯ 2(ÃᵀÃ + ν₀I) ⪯ 8AᵀA
    return pagd(gram(A), f0.scaled(2.0), PagdConfig(8.0, eps * eps), rhs)


def ridge_solver(
    A,
    nu: float,
    epsilon: float,
    k: int,
    seed: int = 0,
    settings: Settings = PRACTICAL,
    delta: float = 0.01,
    direct_below: int = 512,
) -> SolverHandle:
    """ε-solver for ``AᵀA + νI`` through a primal-dual chain headed at ``ν``.

    Small problems (``d ≤ direct_below`` or ``2k > d/2``) use the base solver.
    Otherwise the chain bottom is set from ``Λ̃ = ‖A‖_F²/(2k)``, which
    dominates the tail mass the chain needs.
    """
    A_arr = A.to_dense() if hasattr(A, "to_dense") else np.asarray(A, dtype=float)
    d = A_arr.shape[1]
    eps = clamp_eps(epsilon)
    if not nu > 0:
        raise ContractViolation("nu must be positive")
    k = max(1, int(k))
    if d <= direct_below or 2 * k > d / 2:
        return base_solver(A_arr, nu, eps, delta, derive_seed(seed, "ridge-direct"), settings)
    fro2 = float(np.sum(A_arr**2))
    Lam = fro2 / (2 * k)
    alpha = settings.alpha if settings.alpha is not None else primal_dual_alpha(d, math.sqrt(1.0 + fro2 / nu))
    chain = build_primal_dual_chain(A_arr, k, alpha, Lam, nu, delta, seed, settings)
    base = chain_base(chain, delta, derive_seed(seed, "ridge-base"), settings)
    return pd_chain_solve(chain, base, eps)


def regression_solve(
    A,
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
    """Least squares ``min ‖Ax - b‖`` with ``‖Ax̂ - Ax*‖ ≤ ε‖Ax*‖`` (whp).

    ``A`` is sketched to ``Õ(d)`` rows, a primal-dual chain on the sketch
    gives a solver for ``ÃᵀÃ + λ̃I``, and PAGD on ``AᵀA`` finishes.  With
    ``spectrum_hints`` (``Lambda`` and ``lambda_min``) the estimates are used
    directly; otherwise ``(κ̃, λ̃, Λ̃)`` run over a log grid seeded by
    ``‖A‖_F²`` and the smallest residual wins.
    """
    A = as_operator(A)
    n, d = A.shape
    b = np.asarray(b, dtype=float)
    if b.shape != (n,):
        raise ContractViolation(f"right-hand side must have shape ({n},)")
    if not 1 <= k <= d:
        raise ContractViolation(f"k={k} must lie in [1, d={d}]")
    eps = clamp_eps(epsilon)
    A_arr = A.to_dense()
    fro2 = float(np.sum(A_arr**2))
    if fro2 == 0:
        raise IllPosed("matrix is zero")
    Atil, _ = regularized_embed(A_arr, d, 1.0 / 6.0, delta, derive_seed(seed, "top"), settings)
    rhs = apply_adjoint(A, b)

    if spectrum_hints is not None:
        h = spectrum_hints
        if h.lambda_min is None or h.Lambda is None:
            raise ContractViolation("hints need lambda_min and Lambda")
        kt = h.kappa if h.kappa is not None else math.sqrt(fro2 / h.lambda_min)
        return _candidate(A, Atil, rhs, k, eps, h.Lambda, h.lambda_min, kt, delta, seed, settings, trace)
    return grid_search(
        lambda lam, Lam, kt: _candidate(A, Atil, rhs, k, eps, Lam, lam, kt, delta, seed, settings, None),
        lambda x: _ls_loss(A, x, b),
        fro2,
        d,
        eps,
        deadline,
        trace,
    )


def grid_search(solve, loss, scale: float, d: int, eps: float, deadline: float | None, trace: list | None):
    """Log-grid search over ``(κ̃, λ̃, Λ̃)`` keeping the lowest-loss candidate.

    Round ``r`` sets ``κ̃ = 2^r``, ``λ̃ = scale/(d·κ̃)`` and tries every
    ``Λ̃ = scale·2⁻ᵗ ≥ λ̃``, smallest first.  The search stops once a round
    fails to improve the best loss by more than ``(ε²/4)·|best|`` (after
    two rounds) or when ``deadline`` seconds have passed.
    """
    start = time.monotonic()
    best_x, best_loss = None, math.inf
    kappa_t = 2.0
    rounds = 0
    while kappa_t <= 2.0**52:
        prev_best = best_loss
        round_best = math.inf
        lam = scale / (d * kappa_t)
        steps = max(1, math.ceil(math.log2(scale / lam)))
        for Lam in [scale * 2.0**-t for t in range(steps, 0, -1)]:
            try:
                x = solve(lam, Lam, math.sqrt(d * kappa_t))
            except (ContractViolation, np.linalg.LinAlgError):
                continue
            val = loss(x)
            if trace is not None:
                trace.append({"event": "grid", "kappa": kappa_t, "lambda": lam, "Lambda": Lam, "loss": val})
            round_best = min(round_best, val)
            if val < best_loss:
                best_x, best_loss = x, val
            if deadline is not None and time.monotonic() - start > deadline and best_x is not None:
                return best_x
        rounds += 1
        if rounds >= 2 and round_best >= prev_best - 0.25 * eps * eps * abs(prev_best):
            break
        kappa_t *= 2.0
    if best_x is None:
        raise IllPosed("no grid candidate produced a solution")
    return best_x
