"""Operators, solver handles, work accounting and dense reference oracles.

Everything in the package works on float64 numpy arrays.  A right-hand side
may be a vector of shape ``(d,)`` or a block of shape ``(d, m)``; all
operators and solvers act column-wise on blocks.
"""

from __future__ import annotations

import contextvars
import math
import threading
import zlib
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
from scipy.linalg.lapack import dpotrs as _potrs


# --------------------------------------------------------------------------
# errors


class ContractViolation(ValueError):
    """Raised when an input breaks a documented precondition."""


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Raised when a factorization meets a non-positive pivot."""


class NumericFailure(ArithmeticError):
    """Raised when an iteration produces non-finite values."""


# --------------------------------------------------------------------------
# work accounting


class WorkCounter:
    """Thread-safe accumulator of scalar multiply-accumulate work."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.work = 0
        self.applications = 0

    def add(self, work: int, applications: int = 1) -> None:
        with self._lock:
            self.work += int(work)
            self.applications += int(applications)

    def reset(self) -> None:
        with self._lock:
            self.work = 0
            self.applications = 0

    def __repr__(self) -> str:
        return f"WorkCounter(work={self.work}, applications={self.applications})"


_GLOBAL_COUNTER = WorkCounter()
_ACTIVE: contextvars.ContextVar[WorkCounter] = contextvars.ContextVar(
    "sketchsolve_work_counter", default=_GLOBAL_COUNTER
)


def active_counter() -> WorkCounter:
    """The counter currently charged by operator applications."""
    return _ACTIVE.get()


@contextmanager
def counting() -> Iterator[WorkCounter]:
    """Charge all work inside the block to a fresh counter (and to the outer one)."""
    outer = _ACTIVE.get()
    inner = WorkCounter()
    token = _ACTIVE.set(inner)
    try:
        yield inner
    finally:
        _ACTIVE.reset(token)
        outer.add(inner.work, inner.applications)


def charge(work: float, applications: int = 0) -> None:
    """Charge work that is not an operator application (factorizations, Gram formation)."""
    _ACTIVE.get().add(int(work), applications)


# --------------------------------------------------------------------------
# seeding


def _tag_int(tag: object) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFFFFFFFFFF
    return zlib.crc32(str(tag).encode())


def rng_for(seed: int, *tags: object) -> np.random.Generator:
    """Independent generator derived from ``seed`` and a tuple of tags."""
    entropy = [_tag_int(seed)] + [_tag_int(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed: int, *tags: object) -> int:
    """A 63-bit child seed, stable across platforms."""
    return int(rng_for(seed, *tags).integers(0, 2**63 - 1))


# --------------------------------------------------------------------------
# operators

KINDS = (
    "dense",
    "sparse-embedding",
    "product-chain",
    "gram",
    "gram-plus-ridge",
    "psd-explicit",
    "sum",
    "scaled",
    "callable",
)


def _ncols(v: np.ndarray) -> int:
    return 1 if v.ndim == 1 else v.shape[1]


@dataclass(frozen=True, eq=False)
class LinearOperator:
    """Rectangular linear map with forward and adjoint application.

    ``kind`` selects the action:

    dense / psd-explicit
        ``data`` holds an explicit ndarray.
    sparse-embedding
        ``data`` holds a scipy CSR matrix.
    product-chain
        ``children`` applied right to left: ``children[0] @ children[1] @ ...``.
    gram
        ``childᵀ child`` for the single child.
    gram-plus-ridge
        ``childᵀ child + ridge·I``.
    sum
        sum of the children (all square and equal-shaped).
    scaled
        ``scale · child``.
    callable
        ``data = (forward, adjoint, work_per_column)``.
    """

    kind: str
    n_rows: int
    n_cols: int
    data: object = None
    children: tuple = ()
    ridge: float = 0.0
    scale: float = 1.0
    symmetric: bool = False

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ContractViolation(f"unknown operator kind {self.kind!r}")
        if self.ridge < 0:
            raise ContractViolation("ridge must be nonnegative")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def work(self) -> int:
        """Work per column of input, in multiply-accumulates."""
        return self._work

    @cached_property
    def _work(self) -> int:
        k = self.kind
        if k in ("dense", "psd-explicit"):
            return self.n_rows * self.n_cols
        if k == "sparse-embedding":
            return int(self.data.nnz)
        if k == "product-chain" or k == "sum":
            return sum(c.work() for c in self.children)
        if k == "gram":
            return 2 * self.children[0].work()
        if k == "gram-plus-ridge":
            return 2 * self.children[0].work() + self.n_cols
        if k == "scaled":
            return self.children[0].work() + self.n_rows
        return int(self.data[2])

    def _raw(self, v: np.ndarray, adjoint: bool) -> np.ndarray:
        k = self.kind
        if k in ("dense", "psd-explicit"):
            return self.data.T @ v if adjoint else self.data @ v
        if k == "sparse-embedding":
            return self.data.T @ v if adjoint else self.data @ v
        if k == "product-chain":
            seq = self.children if adjoint else reversed(self.children)
            out = v
            for c in seq:
                out = c._raw(out, adjoint)
            return out
        if k == "gram":
            c = self.children[0]
            return c._raw(c._raw(v, False), True)
        if k == "gram-plus-ridge":
            c = self.children[0]
            return c._raw(c._raw(v, False), True) + self.ridge * v
        if k == "sum":
            out = self.children[0]._raw(v, adjoint)
            for c in self.children[1:]:
                out = out + c._raw(v, adjoint)
            return out
        if k == "scaled":
            return self.scale * self.children[0]._raw(v, adjoint)
        fwd, adj, _ = self.data
        return adj(v) if adjoint else fwd(v)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return apply(self, v)

    def apply_adjoint(self, v: np.ndarray) -> np.ndarray:
        return apply_adjoint(self, v)

    @property
    def T(self) -> "LinearOperator":
        return transpose(self)

    def to_dense(self) -> np.ndarray:
        """Materialize (test scale only)."""
        return np.asarray(self._raw(np.eye(self.n_cols), False), dtype=float)


def apply(op: LinearOperator, v: np.ndarray) -> np.ndarray:
    """Return ``op @ v`` and charge the active work counter."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != op.n_cols:
        raise ContractViolation(
            f"dimension mismatch: operator has {op.n_cols} columns, input has {v.shape[0]} rows"
        )
    m = _ncols(v)
    active_counter().add(op.work() * m, m)
    return np.asarray(op._raw(v, False), dtype=float)


def apply_adjoint(op: LinearOperator, v: np.ndarray) -> np.ndarray:
    """Return ``opᵀ @ v`` and charge the active work counter."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != op.n_rows:
        raise ContractViolation(
            f"dimension mismatch: operator has {op.n_rows} rows, input has {v.shape[0]} rows"
        )
    m = _ncols(v)
    active_counter().add(op.work() * m, m)
    return np.asarray(op._raw(v, True), dtype=float)


def dense(M) -> LinearOperator:
    """Wrap an explicit matrix (dense ndarray or scipy sparse)."""
    if sps.issparse(M):
        M = sps.csr_matrix(M, dtype=float)
        return LinearOperator("sparse-embedding", M.shape[0], M.shape[1], data=M)
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ContractViolation("matrix must be two-dimensional")
    if not np.all(np.isfinite(M)):
        raise ContractViolation("matrix has non-finite entries")
    return LinearOperator("dense", M.shape[0], M.shape[1], data=M)


def psd_explicit(M: np.ndarray) -> LinearOperator:
    """Wrap an explicit symmetric PSD matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ContractViolation("psd-explicit operator must be square")
    return LinearOperator("psd-explicit", M.shape[0], M.shape[0], data=M, symmetric=True)


def identity(n: int) -> LinearOperator:
    """Identity as a one-nonzero-per-column embedding."""
    return LinearOperator("sparse-embedding", n, n, data=sps.identity(n, format="csr"))


def as_operator(A) -> LinearOperator:
    return A if isinstance(A, LinearOperator) else dense(A)


def product(*ops: LinearOperator) -> LinearOperator:
    """``ops[0] @ ops[1] @ ... @ ops[-1]`` as a product chain."""
    ops = tuple(as_operator(o) for o in ops)
    for left, right in zip(ops, ops[1:]):
        if left.n_cols != right.n_rows:
            raise ContractViolation(
                f"product chain mismatch: {left.shape} then {right.shape}"
            )
    return LinearOperator("product-chain", ops[0].n_rows, ops[-1].n_cols, children=ops)


def gram(A, ridge: float = 0.0) -> LinearOperator:
    """``AᵀA + ridge·I`` without forming it."""
    A = as_operator(A)
    if ridge:
        return LinearOperator(
            "gram-plus-ridge", A.n_cols, A.n_cols, children=(A,), ridge=float(ridge), symmetric=True
        )
    return LinearOperator("gram", A.n_cols, A.n_cols, children=(A,), symmetric=True)


def op_sum(*ops: LinearOperator) -> LinearOperator:
    ops = tuple(as_operator(o) for o in ops)
    shape = ops[0].shape
    if any(o.shape != shape for o in ops):
        raise ContractViolation("sum of operators with different shapes")
    return LinearOperator(
        "sum", shape[0], shape[1], children=ops, symmetric=all(o.symmetric for o in ops)
    )


def scaled(op: LinearOperator, c: float) -> LinearOperator:
    op = as_operator(op)
    return LinearOperator(
        "scaled", op.n_rows, op.n_cols, children=(op,), scale=float(c), symmetric=op.symmetric
    )


def ridge_identity(n: int, nu: float) -> LinearOperator:
    """``nu·I`` of side ``n``."""
    return LinearOperator(
        "callable", n, n, data=(lambda v: nu * v, lambda v: nu * v, n), symmetric=True
    )


def from_callable(
    n_rows: int,
    n_cols: int,
    forward: Callable[[np.ndarray], np.ndarray],
    adjoint: Callable[[np.ndarray], np.ndarray] | None = None,
    work: int = 0,
    symmetric: bool = False,
) -> LinearOperator:
    """Operator defined by plain functions; ``work`` is charged per column."""
    if adjoint is None:
        if not symmetric:
            raise ContractViolation("non-symmetric callable operator needs an adjoint")
        adjoint = forward
    return LinearOperator(
        "callable", n_rows, n_cols, data=(forward, adjoint, int(work)), symmetric=symmetric
    )


def transpose(op: LinearOperator) -> LinearOperator:
    """Adjoint as an operator."""
    if op.symmetric:
        return op
    if op.kind == "dense":
        return LinearOperator("dense", op.n_cols, op.n_rows, data=op.data.T)
    if op.kind == "sparse-embedding":
        return LinearOperator("sparse-embedding", op.n_cols, op.n_rows, data=op.data.T.tocsr())
    if op.kind == "product-chain":
        return product(*[transpose(c) for c in reversed(op.children)])
    if op.kind == "scaled":
        return scaled(transpose(op.children[0]), op.scale)
    if op.kind == "sum":
        return op_sum(*[transpose(c) for c in op.children])
    fwd, adj, w = op.data
    return LinearOperator("callable", op.n_cols, op.n_rows, data=(adj, fwd, w))


# --------------------------------------------------------------------------
# solver handles


@dataclass
class SolverStats:
    calls: int = 0
    columns: int = 0


@dataclass(eq=False)
class SolverHandle:
    """A map ``b -> x̂`` claimed to be an ``epsilon``-solver for ``target``.

    ``epsilon == 0`` marks an exact (dense factorization) solver.
    """

    apply_fn: Callable[[np.ndarray], np.ndarray]
    epsilon: float
    target: LinearOperator | None = None
    description: str = ""
    stats: SolverStats = field(default_factory=SolverStats)

    @property
    def dim(self) -> int | None:
        return None if self.target is None else self.target.n_cols

    def __call__(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        self.stats.calls += 1
        self.stats.columns += _ncols(b)
        x = self.apply_fn(b)
        if not np.all(np.isfinite(x)):
            raise NumericFailure(f"non-finite output from solver {self.description!r}")
        return x

    apply = __call__

    def scaled(self, c: float) -> "SolverHandle":
        """Solver for ``c·target`` with the same accuracy."""
        if c <= 0:
            raise ContractViolation("scale must be positive")
        inner = self
        target = None if self.target is None else scaled(self.target, c)
        return SolverHandle(
            lambda b: inner(b) / c, self.epsilon, target, f"{c:g}*({self.description})"
        )


# --------------------------------------------------------------------------
# dense primitives


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower Cholesky factor of a symmetric PD matrix."""

    factor: tuple
    n: int

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        charge(self.n * self.n * _ncols(b), _ncols(b))
        x, info = _potrs(self.factor[0], b, lower=1)
        if info != 0:
            raise NumericFailure("triangular solve failed")
        return x


def cholesky(M: np.ndarray) -> CholeskyFactor:
    """Factor a symmetric PD matrix (no pivoting); raise on a bad pivot."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ContractViolation("matrix must be square")
    if not np.all(np.isfinite(M)):
        raise NumericFailure("matrix has non-finite entries")
    n = M.shape[0]
    charge(n**3 / 3)
    try:
        c = sla.cho_factor(M, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("not positive definite") from exc
    if not np.all(np.diag(c[0]) > 0):
        raise NotPositiveDefinite("not positive definite")
    return CholeskyFactor(c, n)


def dense_pd_factor_solve(M: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``M⁻¹b`` via Cholesky; raises :class:`NotPositiveDefinite`."""
    M = np.asarray(M, dtype=float)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != M.shape[0]:
        raise ContractViolation("dimension mismatch")
    return cholesky(M).solve(b)


def dense_solver(M: np.ndarray, description: str = "dense") -> SolverHandle:
    """Exact solver handle from a Cholesky factorization."""
    M = np.asarray(M, dtype=float)
    fac = cholesky(M)
    return SolverHandle(fac.solve, 0.0, psd_explicit(M), description)


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def gram_matrix(A: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Explicit ``AᵀA + ridge·I`` (charged ``rows·cols²``)."""
    A = np.asarray(A, dtype=float)
    charge(A.shape[0] * A.shape[1] ** 2)
    G = A.T @ A
    if ridge:
        G[np.diag_indices_from(G)] += ridge
    return G


# --------------------------------------------------------------------------
# exact oracles (test support; never used by the solvers)


def exact_spectrum(A) -> np.ndarray:
    """Singular values of ``A`` in descending order."""
    A = A.to_dense() if isinstance(A, LinearOperator) else np.asarray(A, dtype=float)
    return np.linalg.svd(A, compute_uv=False)


def m_norm_error(M, x_hat: np.ndarray, b: np.ndarray) -> float:
    """``‖x̂ − M⁻¹b‖²_M / ‖b‖²_{M⁻¹}`` computed densely.

    For block inputs the worst column is returned.
    """
    M = M.to_dense() if isinstance(M, LinearOperator) else np.asarray(M, dtype=float)
    c = sla.cho_factor(M, lower=True)
    x_star = sla.cho_solve(c, b)
    e = np.asarray(x_hat, dtype=float) - x_star
    num = np.einsum("i...,i...->...", e, M @ e)
    den = np.einsum("i...,i...->...", b, x_star)
    return float(np.max(num / den))


def relative_gen_eigs(M: np.ndarray, N: np.ndarray) -> np.ndarray:
    """Eigenvalues of ``N^{-1/2} M N^{-1/2}`` (ascending)."""
    return sla.eigh(symmetrize(M), symmetrize(N), eigvals_only=True)


def spectral_ratio_bounds(M: np.ndarray, N: np.ndarray) -> tuple[float, float]:
    """Smallest and largest ``c`` with ``lo·N ⪯ M ⪯ hi·N``."""
    w = relative_gen_eigs(M, N)
    return float(w[0]), float(w[-1])


def approx_factor(M: np.ndarray, N: np.ndarray) -> float:
    """Smallest ``c`` with ``M ≈_c N`` (that is ``N/c ⪯ M ⪯ cN``)."""
    lo, hi = spectral_ratio_bounds(M, N)
    return max(hi, 1.0 / lo)


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition."""
    w, V = np.linalg.eigh(symmetrize(M))
    return (V * np.sqrt(np.clip(w, 0, None))) @ V.T


# --------------------------------------------------------------------------
# spectral summaries


def kappa_bar(singular_values: Sequence[float], k: int, p: float) -> float:
    """Averaged condition number over the non-top-``k`` singular values.

    ``((1/(d-k)) Σ_{i>k} (σᵢ/σ_d)^p)^{1/p}``; for ``p = inf`` returns
    ``σ_{k+1}/σ_d``.
    """
    s = np.asarray(singular_values, dtype=float)
    d = s.size
    if not 0 <= k < d:
        raise ContractViolation(f"k must satisfy 0 <= k < d, got k={k}, d={d}")
    if not p > 0:
        raise ContractViolation("p must be positive")
    if np.any(np.diff(s) > 0) or s[-1] <= 0:
        raise ContractViolation("singular values must be positive and descending")
    r = s[k:] / s[-1]
    if math.isinf(p):
        return float(r[0])
    # factor out the largest ratio to keep powers in range
    top = r[0]
    return float(top * np.mean((r / top) ** p) ** (1.0 / p))


def tail_power_mean_bound(values: Sequence[float], k: int, c: float) -> tuple[float, float]:
    """Both sides of ``(1/k)·Σ_{i>k} λᵢ ≤ ((1/k)·Σᵢ λᵢᶜ)^{1/c}`` for ``c ∈ (0, 1)``.

    ``values`` must be positive and descending; returns ``(lhs, rhs)``.
    """
    lam = np.asarray(values, dtype=float)
    d = lam.size
    if not 1 <= k <= d:
        raise ContractViolation(f"k must lie in [1, {d}], got {k}")
    if not 0 < c < 1:
        raise ContractViolation("c must lie in (0, 1)")
    if np.any(lam <= 0) or np.any(np.diff(lam) > 0):
        raise ContractViolation("values must be positive and descending")
    top = lam[0]  # factor out for range safety
    lhs = float(np.sum(lam[k:]) / k)
    rhs = float(top * (np.sum((lam / top) ** c) / k) ** (1.0 / c))
    return lhs, rhs


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class Settings:
    """Tunable constants for the randomized components.

    Attributes
    ----------
    power_q_factor : float
        Power iterations ``q = ⌈power_q_factor · ln(d) / ε⌉``.
    median_trial_factor : float
        Median-of-trials count ``⌈median_trial_factor · ln(1/δ)⌉``.
    tester_accuracy_exponent : float
        Tester solvers run at accuracy ``d^-exponent``.
    sketch_c_s, sketch_c_b : float
        Multipliers in the sparse-embedding sizing formulas.
    chain_rows_factor, chain_cols_factor : float or None
        When set, chain sketches are sized proportional to rank instead of by
        the embedding formula: left sketches get ``rows_factor·k_t`` rows and
        right sketches ``cols_factor·s_t`` columns.
    alpha : float or None
        Fixed schedule exponent for the optimized chains; ``None`` uses the
        theory value.
    geometric_ratio : float
        Growth factor of ``ν_t`` (and shrink factor of ``k_t``) in the
        geometric warm-up chain; any value ``≥ 2`` keeps the chain valid.
    """

    power_q_factor: float = 32.0
    median_trial_factor: float = 8.0
    tester_accuracy_exponent: float = 6.0
    sketch_c_s: float = 4.0
    sketch_c_b: float = 2.0
    chain_rows_factor: float | None = None
    chain_cols_factor: float | None = None
    alpha: float | None = None
    geometric_ratio: float = 1e6

    def with_(self, **kw) -> "Settings":
        return replace(self, **kw)


THEORY = Settings()
PRACTICAL = Settings(
    power_q_factor=2.0,
    median_trial_factor=1.0,
    chain_rows_factor=4.0,
    chain_cols_factor=4.0,
    geometric_ratio=64.0,
)
EPS_FLOOR = 1e-14


def clamp_eps(eps: float) -> float:
    if not eps > 0:
        raise ContractViolation("epsilon must be positive")
    return max(float(eps), EPS_FLOOR)


def log_floor(x: float) -> float:
    """Natural log floored at 1."""
    return max(1.0, math.log(x)) if x > 0 else 1.0
