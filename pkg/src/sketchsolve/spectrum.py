"""Schatten p-norm and nuclear norm estimation driven by ridge solvers.

For ``0 < p < 2`` and ``a = p/2``,

    σ^p = c_a ∫₀^∞ λ^{a-1} σ²/(σ² + λ) dλ,   c_a = sin(πa)/π,

so ``‖A‖_p^p = c_a ∫ λ^{a-1} T(λ) dλ`` with ``T(λ) = tr(AᵀA(AᵀA + λI)⁻¹)``.
The integral is discretized by the trapezoid rule in ``log λ`` on a window
``[λ_lo, λ_hi]``, with closed-form corrections for both tails.  Each
``T(λ_j)`` is a Hutchinson estimate over Rademacher probes shared by all
nodes, and each node applies a ridge solver for ``AᵀA + λ_jI``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    EPS_FLOOR,
    PRACTICAL,
    ContractViolation,
    Settings,
    SolverHandle,
    derive_seed,
    rng_for,
)
from .iterative import MatvecHandle
from .sketching import regularized_embed

BACKENDS = ("regression", "pd")


@dataclass(frozen=True)
class SchattenQuery:
    """Parameters of a Schatten-norm estimate.

    Attributes
    ----------
    p : exponent in ``(0, 2]`` (``(0, 1]`` for the ``pd`` backend, where the
        input is a PSD matrix ``M`` and the target is ``Σ λᵢ(M)^p``).
    epsilon : target relative accuracy.
    target : ``"regression"`` (ridge solves with ``AᵀA + λI``) or ``"pd"``
        (shifted solves with ``M + λI``).
    trace_probes : Rademacher probes per node; ``None`` gives
        ``⌈probe_factor·ln(d)/ε²⌉``.
    lambda_grid : explicit increasing quadrature nodes; ``None`` builds a log
        grid of ``n_nodes`` points over the calibrated window.
    n_nodes : node count for the automatic grid; ``None`` gives ``⌈node_factor/ε⌉``.
    rank : ``k`` handed to the chain solvers (``None``: automatic).
    direct_below : at or below this dimension the node solver is a dense
        factorization.
    """

    p: float
    epsilon: float
    target: str = "regression"
    trace_probes: int | None = None
    lambda_grid: tuple[float, ...] | None = None
    n_nodes: int | None = None
    rank: int | None = None
    direct_below: int = 512
    probe_factor: float = 1.0
    node_factor: float = 4.0

    def __post_init__(self) -> None:
        if not 0 < self.p <= 2:
            raise ContractViolation(f"p must lie in (0, 2], got {self.p}")
        if not 0 < self.epsilon < 1:
            raise ContractViolation("epsilon must lie in (0, 1)")
        if self.target not in BACKENDS:
            raise ContractViolation(f"unknown backend {self.target!r}")
        if self.target == "pd" and self.p > 1:
            raise ContractViolation("the pd backend supports p in (0, 1]")
        if self.trace_probes is not None and self.trace_probes < 1:
            raise ContractViolation("trace_probes must be positive")
        if self.lambda_grid is not None:
            g = np.asarray(self.lambda_grid, dtype=float)
            if g.size < 2 or np.any(g <= 0) or np.any(np.diff(g) <= 0):
                raise ContractViolation("lambda grid must be positive and strictly increasing")


# --------------------------------------------------------------------------
# trace estimation and quadrature


def hutchinson_trace(apply_psd: MatvecHandle, probes: int, seed: int) -> float:
    """``(1/m) Σ gⱼᵀ f(gⱼ)`` over ``m`` Rademacher probes (one block)."""
    if probes < 1:
        raise ContractViolation("probes must be positive")
    G = rademacher(apply_psd.dim, probes, seed)
    return float(np.mean(np.einsum("ij,ij->j", G, apply_psd(G))))


def rademacher(dim: int, probes: int, seed: int) -> np.ndarray:
    rng = rng_for(seed, "rademacher")
    return rng.integers(0, 2, size=(dim, probes)).astype(float) * 2.0 - 1.0


def power_constant(a: float) -> float:
    """``sin(πa)/π`` for the exponent ``a`` of the representation."""
    return math.sin(math.pi * a) / math.pi


def log_grid(lam_lo: float, lam_hi: float, n_nodes: int) -> np.ndarray:
    if not 0 < lam_lo < lam_hi:
        raise ContractViolation("need 0 < lam_lo < lam_hi")
    if n_nodes < 2:
        raise ContractViolation("need at least two nodes")
    return np.exp(np.linspace(math.log(lam_lo), math.log(lam_hi), n_nodes))


def quadrature_weights(grid: Sequence[float], a: float) -> tuple[np.ndarray, float, float]:
    """Weights ``w`` so that ``Σ wⱼ T(λⱼ)`` approximates ``∫ λ^{a-1} T dλ`` on the grid.

    Returns ``(w, lower, upper)``: ``lower·T(λ_lo)`` approximates the integral
    over ``[0, λ_lo]`` and ``upper·tr(AᵀA)`` the integral over ``[λ_hi, ∞)``.
    All three already include the constant ``sin(πa)/π``.
    """
    lam = np.asarray(grid, dtype=float)
    u = np.log(lam)
    h = np.diff(u)
    w = np.zeros_like(lam)
    w[:-1] += h / 2
    w[1:] += h / 2
    c = power_constant(a)
    w = c * w * lam**a  # dλ = λ du
    lower = c * lam[0] ** a / a
    upper = c * lam[-1] ** (a - 1) / (1 - a)
    return w, lower, upper


def quadrature_estimate(T_values: Sequence[float], frob_sq: float, grid: Sequence[float], a: float) -> float:
    """Combine node traces ``T(λⱼ)`` and ``tr(AᵀA)`` into the power-sum estimate."""
    w, lower, upper = quadrature_weights(grid, a)
    T = np.asarray(T_values, dtype=float)
    return float(w @ T + lower * T[0] + upper * frob_sq)


def scalar_quadrature(sigma: float, p: float, grid: Sequence[float]) -> float:
    """The quadrature applied to a single singular value (exact node traces)."""
    s2 = sigma * sigma
    lam = np.asarray(grid, dtype=float)
    return quadrature_estimate(s2 / (s2 + lam), s2, lam, p / 2.0)


def default_window(lam_hat: float, norm_sq: float, epsilon: float) -> tuple[float, float]:
    """``[λ̂·ε², ‖A‖²·ε⁻²]``."""
    return lam_hat * epsilon**2, norm_sq / epsilon**2


def calibrated_lambda(frob_sq: float, d: int, p: float, epsilon: float, estimate: float | None = None) -> float:
    """``λ̂ = (‖A‖_F²/d)·ε^{2/p}``, or ``((ε/d)·X)^{2/p}`` given an estimate ``X``."""
    if estimate is None:
        return frob_sq / d * epsilon ** (2.0 / p)
    return (epsilon / d * estimate) ** (2.0 / p)


def choose_rank_for_p(p: float, d: int, omega_model: float = 3.0) -> int:
    """``k = ⌈d^{(2p+1)/(2pω+1-2p)}⌉`` clamped to ``[1, d/2]``."""
    if not 0 < p < 0.5:
        raise ContractViolation("rank formula applies for p in (0, 1/2)")
    if not 2 <= omega_model <= 3:
        raise ContractViolation("omega_model must lie in [2, 3]")
    e = (2 * p + 1) / (2 * p * omega_model + 1 - 2 * p)
    k = math.ceil(d**e)
    return int(min(max(1, k), max(1, d // 2)))


# --------------------------------------------------------------------------
# estimator


def _node_solver(X: np.ndarray, lam: float, acc: float, query: SchattenQuery, k: int, seed: int, settings: Settings) -> SolverHandle:
    if query.target == "regression":
        from .primal_dual import ridge_solver

        return ridge_solver(X, lam, acc, k, seed=seed, settings=settings, direct_below=query.direct_below)
    from .pd_solver import shifted_solver

    return shifted_solver(X, lam, acc, k, seed=seed, settings=settings, direct_below=query.direct_below)


def _node_traces(
    X: np.ndarray, grid: np.ndarray, G: np.ndarray, query: SchattenQuery, k: int, seed: int, settings: Settings
) -> np.ndarray:
    d = G.shape[0]
    acc = max((query.epsilon / d) ** 3, EPS_FLOOR)
    out = np.empty(grid.size)
    for j, lam in enumerate(grid):
        f = _node_solver(X, float(lam), acc, query, k, derive_seed(seed, "node", j), settings)
        Y = f(G)
        # b ↦ Aᵀ(A·f(b)) for regression, b ↦ M·f(b) for PD
        Z = X.T @ (X @ Y) if query.target == "regression" else X @ Y
        out[j] = float(np.mean(np.einsum("ij,ij->j", G, Z)))
    return out


def schatten_estimate(A, query: SchattenQuery, seed: int = 0, settings: Settings = PRACTICAL, trace: list | None = None) -> float:
    """Estimate ``‖A‖_p^p`` (or ``Σ λᵢ(M)^p`` with the ``pd`` backend).

    ``p = 2`` (``p = 1`` for ``pd``) returns the exact Frobenius norm squared
    (trace).  Otherwise ``A`` is first sketched to ``Õ(d/ε²)`` rows, the
    window is calibrated from ``λ̂ = (‖A‖_F²/d)·ε^{2/p}`` and refined once
    from the resulting estimate, and the quadrature is evaluated with shared
    Rademacher probes.
    """
    X = np.asarray(A.to_dense() if hasattr(A, "to_dense") else A, dtype=float)
    if X.ndim != 2 or min(X.shape) == 0:
        raise ContractViolation("need a nonempty matrix")
    pd = query.target == "pd"
    if pd:
        if X.shape[0] != X.shape[1]:
            raise ContractViolation("pd backend needs a square matrix")
        mass = float(np.trace(X))
        a = query.p
    else:
        mass = float(np.sum(X * X))
        a = query.p / 2.0
    if not mass > 0:
        raise ContractViolation("input is zero")
    if a == 1.0:
        return mass
    eps = query.epsilon
    d = X.shape[1]
    if not pd:
        X, _ = regularized_embed(X, d, eps / 6.0, 0.01, derive_seed(seed, "schatten-top"), settings)
    probes = query.trace_probes or max(2, math.ceil(query.probe_factor * math.log(max(d, 2)) / eps**2))
    n_nodes = query.n_nodes or max(8, math.ceil(query.node_factor / eps))
    if query.rank is not None:
        k = query.rank
    elif query.p < 0.5 and not pd:
        k = choose_rank_for_p(query.p, d)
    else:
        k = 1
    G = rademacher(d, probes, derive_seed(seed, "schatten-probes"))
    top = mass  # dominates the top eigenvalue of AᵀA (or M)
    p_eff = 2.0 * a  # exponent in terms of σ with σ² the eigenvalue scale

    def run(lam_hat: float) -> float:
        if query.lambda_grid is not None:
            grid = np.asarray(query.lambda_grid, dtype=float)
        else:
            lo, hi = default_window(lam_hat, top, eps)
            grid = log_grid(lo, hi, n_nodes)
        T = _node_traces(X, grid, G, query, k, seed, settings)
        est = quadrature_estimate(T, mass, grid, a)
        if trace is not None:
            trace.append({"event": "schatten-pass", "lambda_hat": lam_hat, "nodes": int(grid.size),
                          "probes": probes, "estimate": est})
        return est

    lam0 = calibrated_lambda(mass, d, p_eff, eps)
    est = run(lam0)
    if query.lambda_grid is None and est > 0:
        est = run(calibrated_lambda(mass, d, p_eff, eps, est))
    return est


def nuclear_norm(A, epsilon: float, seed: int = 0, settings: Settings = PRACTICAL, **query_kw) -> float:
    """``‖A‖₁ = Σσᵢ`` to within ``1 ± ε`` (whp), using the regression backend."""
    return schatten_estimate(A, SchattenQuery(1.0, epsilon, "regression", **query_kw), seed, settings)
