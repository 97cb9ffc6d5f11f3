"""Preconditioned accelerated descent, power methods and solver squaring."""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .core import (
    THEORY,
    ContractViolation,
    LinearOperator,
    NumericFailure,
    Settings,
    SolverHandle,
    apply,
    as_operator,
    clamp_eps,
    product,
    rng_for,
)


# --------------------------------------------------------------------------
# PAGD


@dataclass(frozen=True)
class PagdConfig:
    """Relative condition bound ``kappa`` and target accuracy ``epsilon``."""

    kappa: float
    epsilon: float

    def __post_init__(self) -> None:
        if not self.kappa >= 1.0:
            raise ContractViolation(f"kappa must be >= 1, got {self.kappa}")
        if not 0 < self.epsilon < 1:
            raise ContractViolation(f"epsilon must lie in (0, 1), got {self.epsilon}")

    @property
    def max_iters(self) -> int:
        return max(1, math.ceil(4.0 * math.sqrt(self.kappa) * math.log(2.0 / self.epsilon)))


@dataclass(frozen=True)
class PagdRecord:
    kappa: float
    epsilon: float
    cap: int
    precond_applications: int
    operator_applications: int
    columns: int


class _Audit(threading.local):
    def __init__(self) -> None:
        self.stack: list[list[PagdRecord]] = []


_AUDIT = _Audit()
_TOTALS = {"calls": 0, "over_cap": 0}


@contextmanager
def pagd_audit() -> Iterator[list[PagdRecord]]:
    """Collect a :class:`PagdRecord` for every PAGD run inside the block."""
    records: list[PagdRecord] = []
    _AUDIT.stack.append(records)
    try:
        yield records
    finally:
        _AUDIT.stack.remove(records)


def pagd_totals() -> dict:
    """Process-wide count of PAGD runs and of runs that exceeded their cap."""
    return dict(_TOTALS)


def _record(rec: PagdRecord) -> None:
    _TOTALS["calls"] += 1
    if rec.precond_applications > rec.cap or rec.operator_applications > rec.cap:
        _TOTALS["over_cap"] += 1
    for sink in _AUDIT.stack:
        sink.append(rec)


def _coldot(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->j", u, v)


def pagd_with_info(
    M: LinearOperator, precond: SolverHandle, config: PagdConfig, b: np.ndarray
) -> tuple[np.ndarray, PagdRecord]:
    """Run PAGD and also return its application counts.

    Preconditioned Nesterov iteration in the geometry of the preconditioner's
    target ``N`` (unit step, momentum ``(√κ-1)/(√κ+1)``).  Each column stops
    as soon as a certified bound shows the ε-solution property already holds:
    with ``r = b - My`` and ``z = f(r)``,

        ‖y - M⁻¹b‖²_M = rᵀM⁻¹r ≤ κ·rᵀN⁻¹r ≤ κ·rᵀz / (1-√ε_f)
        ‖b‖²_{M⁻¹} ≥ bᵀN⁻¹b ≥ bᵀf(b) / (1+√ε_f)

    Otherwise it runs to the hard cap ``⌈4√κ log(2/ε)⌉``.
    """
    M = as_operator(M)
    kappa, eps = config.kappa, config.epsilon
    if precond.epsilon > 1.0 / (10.0 * kappa) * (1 + 1e-9):
        raise ContractViolation(
            f"preconditioner accuracy {precond.epsilon:.3g} exceeds 1/(10κ) = {1 / (10 * kappa):.3g}"
        )
    b = np.asarray(b, dtype=float)
    if b.shape[0] != M.n_cols:
        raise ContractViolation("right-hand side has the wrong dimension")
    vec = b.ndim == 1
    B = b.reshape(b.shape[0], -1)
    d, m = B.shape
    cap = config.max_iters
    sk = math.sqrt(kappa)
    beta = (sk - 1.0) / (sk + 1.0)
    ef = math.sqrt(precond.epsilon)
    lower = 1.0 - ef
    upper = 1.0 + ef

    out = np.zeros_like(B)
    active = np.arange(m)  # original indices of the columns still iterating
    Bact = B
    x = y = None
    target = None
    n_pre = 0
    n_op = 0
    for it in range(cap):
        if it == 0:
            r = Bact
        else:
            r = Bact - apply(M, y)
            n_op += 1
        z = precond(r)
        n_pre += 1
        rz = _coldot(r, z)
        if not np.isfinite(rz).all():
            raise NumericFailure("non-finite iterate in PAGD")
        if it == 0:
            target = eps * rz / upper
            x = np.zeros_like(B)
            y = np.zeros_like(B)
        done = kappa * rz / lower <= target
        if done.any():
            out[:, active[done]] = y[:, done]
            keep = ~done
            if not keep.any():
                active = active[keep]
                break
            active, target, Bact = active[keep], target[keep], Bact[:, keep]
            x, y, z = x[:, keep], y[:, keep], z[:, keep]
        x_new = y + z
        y = x_new + beta * (x_new - x)
        x = x_new
    if active.size:
        out[:, active] = x
    rec = PagdRecord(kappa, eps, cap, n_pre, n_op, m)
    _record(rec)
    return (out[:, 0] if vec else out), rec


def pagd(M: LinearOperator, precond: SolverHandle, config: PagdConfig, b: np.ndarray) -> np.ndarray:
    """Solve ``Mx = b`` to ε-solution accuracy given a solver for ``N``.

    Requires ``M ⪯ N ⪯ κM`` and ``precond`` a ``1/(10κ)``-solver for ``N``.
    ``precond`` and ``M`` are each applied at most ``config.max_iters`` times.
    """
    return pagd_with_info(M, precond, config, b)[0]


def pagd_solver(
    M: LinearOperator,
    precond: SolverHandle,
    kappa: float,
    epsilon: float,
    description: str = "pagd",
) -> SolverHandle:
    """Wrap :func:`pagd` as a reusable ε-solver handle for ``M``."""
    config = PagdConfig(float(kappa), clamp_eps(epsilon))
    M = as_operator(M)
    if precond.epsilon > 1.0 / (10.0 * config.kappa) * (1 + 1e-9):
        raise ContractViolation(
            f"{description}: preconditioner accuracy {precond.epsilon:.3g} exceeds 1/(10κ)"
        )
    return SolverHandle(
        lambda b: pagd(M, precond, config, b), config.epsilon, M, description
    )


# --------------------------------------------------------------------------
# matvec handles and power methods


@dataclass(eq=False)
class MatvecHandle:
    """Approximate product with a fixed matrix: ``‖f(b) - Mb‖² ≤ ε‖Mb‖²``."""

    apply_fn: Callable[[np.ndarray], np.ndarray]
    epsilon: float
    dim: int
    description: str = ""

    def __call__(self, b: np.ndarray) -> np.ndarray:
        return self.apply_fn(np.asarray(b, dtype=float))

    @classmethod
    def exact(cls, M) -> "MatvecHandle":
        M = as_operator(M)
        return cls(lambda v: apply(M, v), 0.0, M.n_cols, "exact")


def power_iterates(f: Callable[[np.ndarray], np.ndarray], X: np.ndarray, q: int) -> np.ndarray:
    """Rayleigh ratios ``yᵀf(y)/yᵀy`` with ``y`` the ``q``-th normalized iterate.

    For an exact symmetric ``M`` this equals ``xᵀM^{2q+1}x / xᵀM^{2q}x``.
    """
    Y = X.copy()
    for _ in range(q):
        Y = f(Y)
        nrm = np.linalg.norm(Y, axis=0)
        if not np.all(np.isfinite(nrm)):
            raise NumericFailure("non-finite power iterate")
        nrm[nrm == 0] = 1.0
        Y = Y / nrm
    FY = f(Y)
    num = np.einsum("ij,ij->j", Y, FY)
    den = np.einsum("ij,ij->j", Y, Y)
    if not (np.all(np.isfinite(num)) and np.all(np.isfinite(den))):
        raise NumericFailure("non-finite power estimate")
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return ratio


def power_method_exact(M: LinearOperator, q: int, seed: int) -> float:
    """One-trial power estimate ``ξ_q ≤ λ_max(M)`` for symmetric PSD ``M``."""
    if q < 1:
        raise ContractViolation("q must be positive")
    M = as_operator(M)
    rng = rng_for(seed, "power-exact")
    x = rng.standard_normal((M.n_cols, 1))
    while not np.any(x):
        x = rng.standard_normal((M.n_cols, 1))
    return float(power_iterates(lambda v: apply(M, v), x, q)[0])


def inexact_matvec_power(f: MatvecHandle, q: int, kappa: float | None = None) -> MatvecHandle:
    """``q``-fold composition of ``f``, an approximate product with ``M^q``.

    With ``kappa`` (a bound on the condition number of ``M``) the returned
    accuracy claim is ``ε_f·(3κ)^{2q}``; otherwise it is left unknown (inf).
    """
    if q < 1:
        raise ContractViolation("q must be positive")
    if q == 1:
        return f

    def composed(v: np.ndarray) -> np.ndarray:
        for _ in range(q):
            v = f(v)
        return v

    eps = math.inf if kappa is None else f.epsilon * (3.0 * kappa) ** (2 * q)
    return MatvecHandle(composed, eps, f.dim, f"({f.description})^{q}")


def power_schedule(dim: int, epsilon: float, delta: float, settings: Settings = THEORY) -> tuple[int, int]:
    """Power iterations and median trial count for a ``1+ε`` norm estimate."""
    q = max(2, math.ceil(settings.power_q_factor * math.log(max(dim, 2)) / epsilon))
    trials = max(1, math.ceil(settings.median_trial_factor * math.log(1.0 / delta)))
    return q, trials


def estimate_spectral_norm(
    f: MatvecHandle,
    epsilon: float,
    delta: float,
    seed: int,
    settings: Settings = THEORY,
    q: int | None = None,
    trials: int | None = None,
) -> float:
    """Median of independent power estimates of ``‖M‖``.

    Each trial is a Rayleigh ratio of a Gaussian start after ``q`` steps, so
    every trial is at most ``‖M‖`` (up to the matvec error).  Trials run as
    one block.
    """
    if not 0 < delta < 1:
        raise ContractViolation("delta must lie in (0, 1)")
    q0, t0 = power_schedule(f.dim, epsilon, delta, settings)
    q = q0 if q is None else q
    trials = t0 if trials is None else trials
    rng = rng_for(seed, "norm-estimate")
    X = rng.standard_normal((f.dim, trials))
    est = power_iterates(f, X, q)
    return float(np.median(est))


def norm_upper_bound(A, seed: int, q: int | None = None, trials: int = 3) -> float:
    """Upper bound ``2·ξ`` on ``‖A‖²`` from a power estimate ``ξ`` on ``AᵀA``.

    ``ξ ≤ ‖A‖²`` always; the max over a few trials makes ``ξ ≥ ‖A‖²/2`` hold
    with high probability.
    """
    A = as_operator(A)
    d = A.n_cols
    if q is None:
        q = max(2, math.ceil(32 * math.log(max(d, 2))))

    def gram_apply(v: np.ndarray) -> np.ndarray:
        return A.apply_adjoint(A.apply(v))

    X = rng_for(seed, "norm-upper").standard_normal((d, trials))
    return 2.0 * float(np.max(power_iterates(gram_apply, X, q)))


# --------------------------------------------------------------------------
# squaring


def square_solver(f: SolverHandle, kappa_A: float, epsilon: float) -> SolverHandle:
    """``b ↦ f(f(b))``: an ε-solver for ``A²`` when ``f`` is an ``ε/(9κ²)``-solver for ``A``."""
    need = epsilon / (9.0 * kappa_A**2)
    if f.epsilon > need * (1 + 1e-9):
        raise ContractViolation(
            f"squaring needs inner accuracy {need:.3g}, got {f.epsilon:.3g}"
        )
    target = None if f.target is None else product(f.target, f.target)
    return SolverHandle(lambda b: f(f(b)), float(epsilon), target, f"square({f.description})")
