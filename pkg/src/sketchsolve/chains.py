"""Recursive preconditioning chains and the warm-up regression solver."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    THEORY,
    ContractViolation,
    LinearOperator,
    Settings,
    SolverHandle,
    apply,
    apply_adjoint,
    as_operator,
    clamp_eps,
    derive_seed,
    gram,
    scaled,
)
from .iterative import PagdConfig, pagd, pagd_solver
from .sketching import regularized_embed, tail_sum
from .woodbury import base_solver


class IllPosed(ContractViolation):
    """The regression instance is rank deficient or otherwise degenerate."""


# --------------------------------------------------------------------------
# types


@dataclass
class PreconChain:
    """``M_0`` followed by ``(M_t, κ_t)`` with ``M_{t-1} ⪯ M_t ⪯ κ_t M_{t-1}``."""

    M0: LinearOperator
    levels: list[tuple[LinearOperator, float]]

    @property
    def T(self) -> int:
        return len(self.levels)

    def matrices(self) -> list[LinearOperator]:
        return [self.M0] + [m for m, _ in self.levels]

    def kappas(self) -> list[float]:
        return [k for _, k in self.levels]


@dataclass
class RegularizedChain:
    """Entries ``(A_t, ν_t)``, ``t = 0..T``, with nondecreasing ``ν_t``."""

    entries: list[tuple[np.ndarray, float]]
    ranks: list[int] = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.entries) - 1

    @property
    def nus(self) -> list[float]:
        return [nu for _, nu in self.entries]


@dataclass(frozen=True)
class ScheduleParams:
    """Optimized schedule ``k_t = max(⌈d·e^{-αt²}⌉, 2k)`` for ``t = 1..T``."""

    alpha: float
    k: int
    d: int
    T: int
    ks: tuple[int, ...]


@dataclass(frozen=True)
class SpectrumHints:
    """Problem-dependent estimates that the solvers would otherwise search for.

    Attributes
    ----------
    u : estimate of ``tail_sum(σ, k)`` within a factor 2.
    lambda_min : estimate of the smallest squared singular value (or smallest
        eigenvalue for PD inputs) within a factor 2.
    Lambda : estimate of ``tail_sum(σ, 2k)`` within a factor 2.
    sigma_sq : per-index estimates of the squared singular values.
    kappa : estimate of the condition number, used only in schedule formulas.
    """

    u: float | None = None
    lambda_min: float | None = None
    Lambda: float | None = None
    sigma_sq: tuple[float, ...] | None = None
    kappa: float | None = None

    @classmethod
    def from_singular_values(cls, sigma: Sequence[float], k: int) -> "SpectrumHints":
        """Exact hints from a known spectrum (e.g. a generator sidecar)."""
        s = np.sort(np.asarray(sigma, dtype=float))[::-1]
        d = s.size
        return cls(
            u=tail_sum(s, min(k, d)),
            lambda_min=float(s[-1] ** 2),
            Lambda=tail_sum(s, min(2 * k, d)),
            sigma_sq=tuple(float(v) for v in s**2),
            kappa=float(s[0] / s[-1]),
        )

    @classmethod
    def from_eigenvalues(cls, lam: Sequence[float], k: int) -> "SpectrumHints":
        """Exact hints for a PD matrix from its eigenvalues."""
        return cls.from_singular_values(np.sqrt(np.asarray(lam, dtype=float)), k)


# --------------------------------------------------------------------------
# recursive preconditioning


def rpagd(chain: PreconChain, bsolve: SolverHandle, epsilon: float) -> SolverHandle:
    """ε-solver for ``M_0`` by nested PAGD down the chain.

    Level ``t`` is solved with PAGD preconditioned by the level-``t+1`` solver
    at accuracy ``1/(10κ_{t+1})``; the last level uses ``bsolve``, which must be
    a ``1/(10κ_T)``-solver for ``M_T``.
    """
    eps = clamp_eps(epsilon)
    if chain.T == 0:
        if bsolve.epsilon > eps * (1 + 1e-9):
            raise ContractViolation("base solver is less accurate than requested")
        return bsolve
    kappas = chain.kappas()
    mats = chain.matrices()
    if bsolve.epsilon > 1.0 / (10.0 * kappas[-1]) * (1 + 1e-9):
        raise ContractViolation("base solver accuracy must be at most 1/(10κ_T)")
    solver = bsolve
    for t in range(chain.T, 0, -1):
        acc = eps if t == 1 else 1.0 / (10.0 * kappas[t - 2])
        solver = pagd_solver(mats[t - 1], solver, kappas[t - 1], acc, f"rpagd-level{t - 1}")
    return solver


def rpagd_call_bound(kappas: Sequence[float], epsilon: float) -> int:
    """``∏_t ⌈4√κ_t log(20κ_{t-1})⌉`` with ``κ_0 = 1/(10ε)``."""
    ks = [1.0 / (10.0 * clamp_eps(epsilon))] + list(kappas)
    out = 1
    for t in range(1, len(ks)):
        out *= math.ceil(4.0 * math.sqrt(ks[t]) * math.log(20.0 * ks[t - 1]))
    return out


def lift_regularized_chain(chain: RegularizedChain, epsilon: float | None = None) -> PreconChain:
    """``M_t = 4ᵗ(A_tᵀA_t + ν_tI)`` and ``κ_t = 16ν_t/ν_{t-1}``.

    The top matrix is unscaled, so a solver for the lifted ``M_0`` is directly a
    solver for ``A_0ᵀA_0 + ν_0I``.
    """
    nus = chain.nus
    if any(b < a for a, b in zip(nus, nus[1:])):
        raise ContractViolation("regularization levels must be nondecreasing")
    if nus[0] <= 0:
        raise ContractViolation("regularization levels must be positive")
    mats = [scaled(gram(A, nu), 4.0**t) if t else gram(A, nu) for t, (A, nu) in enumerate(chain.entries)]
    levels = [(mats[t], 16.0 * nus[t] / nus[t - 1]) for t in range(1, len(mats))]
    return PreconChain(mats[0], levels)


def chain_base_solver(
    chain: RegularizedChain, lifted: PreconChain, delta: float, seed: int, settings: Settings
) -> SolverHandle:
    """Base solver for the last lifted level at accuracy ``1/(10κ_T)``."""
    A_T, nu_T = chain.entries[-1]
    acc = 1.0 / (10.0 * lifted.kappas()[-1]) if lifted.T else 0.1
    base = base_solver(A_T, nu_T, acc, delta, seed, settings)
    return base.scaled(4.0**chain.T) if chain.T else base


# --------------------------------------------------------------------------
# chain construction


def build_chain_geometric(
    A,
    k: int,
    u: float,
    delta: float,
    seed: int,
    settings: Settings = THEORY,
    ratio: float | None = None,
) -> RegularizedChain:
    """Chain with ``ν_t = ν_0·ratioᵗ`` and ranks ``k_t = ⌈d·ratio^{1-t}⌉``.

    ``u`` estimates ``tail_sum(σ(A), k)`` within a factor 2 and ``ν_0 = uk/d``.
    ``ratio`` defaults to ``settings.geometric_ratio``.
    """
    ratio = settings.geometric_ratio if ratio is None else float(ratio)
    if not ratio >= 2:
        raise ContractViolation("geometric ratio must be at least 2")
    A_arr = A.to_dense() if isinstance(A, LinearOperator) else np.asarray(A, dtype=float)
    d = A_arr.shape[1]
    if not 1 <= k <= d:
        raise ContractViolation(f"k={k} must lie in [1, d={d}]")
    if not u > 0:
        raise ContractViolation("u must be positive")
    T = max(1, math.ceil(math.log(d / k) / math.log(ratio) - 1e-12))
    nu0 = u * k / d
    entries = [(A_arr, nu0)]
    ranks = [d]
    for t in range(1, T + 1):
        kt = min(d, max(k, math.ceil(d * ratio ** (1 - t))))
        At, _ = regularized_embed(A_arr, kt, 1.0 / 6.0, delta, derive_seed(seed, "geo", t), settings)
        entries.append((At, nu0 * ratio**t))
        ranks.append(kt)
    return RegularizedChain(entries, ranks)


def optimized_schedule(d: int, k: int, alpha: float) -> ScheduleParams:
    """Depth and ranks of the ``k_t = max(⌈d e^{-αt²}⌉, 2k)`` schedule."""
    if 2 * k > d:
        raise ContractViolation(f"schedule needs 2k <= d (k={k}, d={d})")
    if not alpha > 0:
        raise ContractViolation("alpha must be positive")
    T = max(1, math.ceil(math.sqrt(math.log(d / (2 * k)) / alpha) - 1e-12))
    ks = tuple(max(math.ceil(d * math.exp(-alpha * t * t)), 2 * k) for t in range(1, T + 1))
    return ScheduleParams(alpha, k, d, T, ks)


def build_chain_optimized(
    A,
    k: int,
    alpha: float,
    nu_list: Sequence[float],
    delta: float,
    seed: int,
    settings: Settings = THEORY,
) -> RegularizedChain:
    """Chain on the optimized schedule with embeddings built for rank ``4k_t``.

    ``nu_list`` holds ``ν_0..ν_T`` (nondecreasing) for ``T`` from
    :func:`optimized_schedule`.
    """
    A_arr = A.to_dense() if isinstance(A, LinearOperator) else np.asarray(A, dtype=float)
    d = A_arr.shape[1]
    if 2 * k > d:
        raise ContractViolation("optimized chain needs 2k <= d; factor directly instead")
    sched = optimized_schedule(d, k, alpha)
    nus = [float(v) for v in nu_list]
    if len(nus) != sched.T + 1:
        raise ContractViolation(f"need {sched.T + 1} regularization levels, got {len(nus)}")
    if any(b < a for a, b in zip(nus, nus[1:])) or nus[0] <= 0:
        raise ContractViolation("regularization levels must be positive and nondecreasing")
    entries = [(A_arr, nus[0])]
    ranks = [d]
    for t, kt in enumerate(sched.ks, start=1):
        rank = min(d, 4 * kt)
        At, _ = regularized_embed(A_arr, rank, 1.0 / 6.0, delta, derive_seed(seed, "opt", t), settings)
        entries.append((At, nus[t]))
        ranks.append(rank)
    return RegularizedChain(entries, ranks)


def warmup_alpha(d: int, sigma_sq: Sequence[float]) -> float:
    """Schedule exponent ``log(20·log(320·256·d·σ̃₁²/σ̃_d²))``."""
    ratio = max(sigma_sq) / min(sigma_sq)
    return math.log(20.0 * math.log(320.0 * 256.0 * d * ratio))


# --------------------------------------------------------------------------
# warm-up regression


def _ls_loss(A: LinearOperator, x: np.ndarray, b: np.ndarray) -> float:
    r = apply(A, x) - b
    return float(r @ r)


def _warmup_candidate(
    A: LinearOperator,
    Atil: np.ndarray,
    rhs: np.ndarray,
    k: int,
    eps: float,
    mode: str,
    hints: SpectrumHints,
    delta: float,
    seed: int,
    settings: Settings,
    trace: list | None,
) -> np.ndarray:
    d = A.n_cols
    if hints.lambda_min is None and hints.sigma_sq is None:
        raise ContractViolation("hints need lambda_min or sigma_sq")
    if mode == "geometric":
        if hints.u is None or hints.lambda_min is None:
            raise ContractViolation("geometric mode needs hints u and lambda_min")
        if hints.lambda_min <= 0:
            raise IllPosed("smallest singular value estimate must be positive")
        chain = build_chain_geometric(Atil, min(k, d), hints.u, delta, seed, settings)
        nu0 = chain.entries[0][1]
        kappa_outer = 4.0 + 4.0 * nu0 / hints.lambda_min
    elif mode == "optimized":
        if hints.sigma_sq is None:
            raise ContractViolation("optimized mode needs sigma_sq hints")
        s2 = np.sort(np.asarray(hints.sigma_sq, dtype=float))[::-1]
        if s2[-1] <= 0:
            raise IllPosed("smallest singular value estimate must be positive")
        nu0 = float(s2[-1])
        kappa_outer = 8.0
        if 2 * k > d / 2:
            chain = RegularizedChain([(Atil, nu0)], [d])
        else:
            alpha = settings.alpha if settings.alpha is not None else warmup_alpha(d, s2)
            sched = optimized_schedule(d, k, alpha)
            nus = [nu0]
            for kt in sched.ks:
                nus.append(max(nus[-1], tail_sum(np.sqrt(s2), kt)))
            chain = build_chain_optimized(Atil, k, alpha, nus, delta, seed, settings)
    else:
        raise ContractViolation(f"unknown warm-up mode {mode!r}")

    lifted = lift_regularized_chain(chain)
    base = chain_base_solver(chain, lifted, delta, derive_seed(seed, "base"), settings)
    f = rpagd(lifted, base, 1.0 / (10.0 * kappa_outer))
    if trace is not None:
        trace.append(
            {
                "event": "warmup-chain",
                "mode": mode,
                "levels": chain.T,
                "nus": [float(v) for v in chain.nus],
                "rows": [int(a.shape[0]) for a, _ in chain.entries],
                "kappa_outer": kappa_outer,
            }
        )
    return pagd(gram(A), f.scaled(2.0), PagdConfig(kappa_outer, eps * eps), rhs)


def _grid_values(top: float, d: int, kappa: float) -> list[float]:
    steps = max(1, math.ceil(math.log2(d * kappa)))
    return [top * 2.0**-t for t in range(1, steps + 1)]


def regression_solve_warmup(
    A,
    b: np.ndarray,
    k: int,
    epsilon: float,
    mode: str = "optimized",
    spectrum_hints: SpectrumHints | None = None,
    seed: int = 0,
    settings: Settings = THEORY,
    delta: float = 0.01,
    deadline: float | None = None,
    trace: list | None = None,
) -> np.ndarray:
    """Least squares ``min ‖Ax - b‖`` with ``‖Ax̂ - Ax*‖ ≤ ε‖Ax*‖`` (whp).

    ``A`` is first sketched to ``O(d)`` rows; a regularized chain on the
    sketch yields a solver for ``ÃᵀÃ + ν_0I``, which preconditions PAGD on
    ``AᵀA`` (scaled by 2).  Without hints, ``(κ̃, u)`` run over the log grid
    seeded by ``‖A‖_F²`` and the candidate with the smallest residual wins.
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
        return _warmup_candidate(A, Atil, rhs, k, eps, mode, spectrum_hints, delta, seed, settings, trace)
    if mode != "geometric":
        raise ContractViolation("grid search is available in geometric mode; pass hints for optimized mode")

    start = time.monotonic()
    best_x, best_loss = None, math.inf
    kappa_t = 2.0
    rounds = 0
    while kappa_t <= 2.0**52:
        prev_best = best_loss
        round_best = math.inf
        lam = fro2 / (d * kappa_t)
        for u in _grid_values(fro2, d, kappa_t)[::-1]:  # smaller u first so ties keep it
            hints = SpectrumHints(u=u, lambda_min=lam)
            x = _warmup_candidate(A, Atil, rhs, k, eps, mode, hints, delta, seed, settings, None)
            loss = _ls_loss(A, x, b)
            if trace is not None:
                trace.append({"event": "grid", "kappa": kappa_t, "u": u, "loss": loss})
            round_best = min(round_best, loss)
            if loss < best_loss:
                best_x, best_loss = x, loss
            if deadline is not None and time.monotonic() - start > deadline:
                return best_x
        rounds += 1
        if rounds >= 2 and round_best >= prev_best * (1.0 - 0.25 * eps * eps):
            break
        kappa_t *= 2.0
    return best_x
