"""Low-rank-plus-ridge inversion and the bottom-of-recursion ridge solver."""

from __future__ import annotations

from dataclasses import dataclass

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
    cholesky,
    dense,
    derive_seed,
    gram,
    gram_matrix,
    psd_explicit,
)
from .iterative import norm_upper_bound, pagd_solver
from .sketching import EmbeddingPlan, make_sparse_embedding


@dataclass(frozen=True)
class WoodburyForm:
    """``M = C W⁻¹ Cᵀ + νI`` with ``C`` of shape ``(n, d)``.

    ``W`` is kept for reference only (``None`` stands for the identity); the
    solve needs a solver for the inner matrix ``CᵀC + νW``.  ``norm_bound`` must dominate ``‖M‖``.
    """

    C: LinearOperator
    W: object
    nu: float
    norm_bound: float

    def __post_init__(self) -> None:
        if not self.nu > 0:
            raise ContractViolation("nu must be positive")
        if not self.norm_bound >= self.nu:
            raise ContractViolation("norm bound must be at least nu")

    def inner_accuracy(self, epsilon: float) -> float:
        """Inner accuracy sufficient for an ``epsilon``-solver of ``M``."""
        return epsilon * self.nu**2 / self.norm_bound**2


def woodbury_solve(form: WoodburyForm, inner: SolverHandle, epsilon: float) -> SolverHandle:
    """Solver ``g(b) = (b - C·f(Cᵀb))/ν`` for ``M = CW⁻¹Cᵀ + νI``.

    ``inner`` solves ``CᵀC + νW``; its accuracy must be at most
    ``εν²/‖M‖²`` for the result to be an ε-solver.
    """
    need = form.inner_accuracy(epsilon)
    if inner.epsilon > need * (1 + 1e-9):
        raise ContractViolation(
            f"inner accuracy {inner.epsilon:.3g} exceeds the required {need:.3g}"
        )
    C, nu = as_operator(form.C), form.nu

    def solve(b: np.ndarray) -> np.ndarray:
        return (b - apply(C, inner(apply_adjoint(C, b)))) / nu

    return SolverHandle(solve, float(epsilon), None, f"woodbury(nu={nu:.3g})")


def base_solver(
    A,
    nu: float,
    epsilon: float,
    delta: float,
    seed: int,
    settings: Settings = THEORY,
) -> SolverHandle:
    """ε-solver for ``AᵀA + νI`` with ``A`` of shape ``(s, d)``.

    For ``s ≤ d`` the ridge system is inverted through the ``s × s`` dual
    ``AAᵀ + νI``: a sketch of ``Aᵀ`` gives ``P = ASᵀSAᵀ + νI ≈₂ AAᵀ + νI``,
    which is factored once and used (scaled by 2) to precondition PAGD on the
    dual with ``κ = 4``.  For ``s > d`` the ``d × d`` system is factored directly.
    """
    if not nu > 0:
        raise ContractViolation("nu must be positive")
    A_arr = A.to_dense() if isinstance(A, LinearOperator) else np.asarray(A, dtype=float)
    if A_arr.ndim != 2 or min(A_arr.shape) == 0:
        raise ContractViolation("base solver needs a nonempty matrix")
    eps = clamp_eps(epsilon)
    s, d = A_arr.shape
    if s > d:
        G = gram_matrix(A_arr, nu)
        fac = cholesky(G)
        return SolverHandle(fac.solve, 0.0, psd_explicit(G), f"dense-ridge(d={d})")

    A_op = dense(A_arr)
    At = dense(A_arr.T)
    norm_bound = norm_upper_bound(At, derive_seed(seed, "base-norm")) + nu
    plan = EmbeddingPlan.from_settings(s, 0.5, delta, settings)
    S = make_sparse_embedding(plan, d, derive_seed(seed, "base-sketch"))
    SAt = S.apply_left(A_arr.T)
    P = gram_matrix(SAt, nu)
    fac = cholesky(P)
    form = WoodburyForm(At, None, nu, norm_bound)
    dual = gram(At, nu)  # AAᵀ + νI as (Aᵀ)ᵀ(Aᵀ) + νI
    if S.is_identity:
        # the sketch kept every row, so P is the dual matrix itself
        inner = SolverHandle(fac.solve, 0.0, dual, "exact-dual")
    else:
        pre = SolverHandle(fac.solve, 0.0, psd_explicit(P), "sketched-dual").scaled(2.0)
        inner = pagd_solver(dual, pre, 4.0, form.inner_accuracy(eps), "base-dual")
    out = woodbury_solve(form, inner, eps)
    out.target = gram(A_op, nu)
    out.description = f"base(s={s}, d={d})"
    return out
