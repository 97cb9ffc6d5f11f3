"""Sparse oblivious subspace embeddings and regularized sketches.

A sparse embedding ``S`` of shape ``(s, n)`` has exactly ``b`` nonzeros in
each column, at distinct rows chosen uniformly at random, with values
``±1/√b``.  Sizes follow the usual subspace-embedding formulas with
configurable constants; when the formula asks for at least as many rows as
the input has, the plan degenerates to the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sps

from .core import (
    THEORY,
    ContractViolation,
    LinearOperator,
    Settings,
    charge,
    identity,
    log_floor,
    product,
    rng_for,
)


@dataclass(frozen=True)
class EmbeddingPlan:
    """Sizing recipe for a sparse embedding of rank ``k``.

    ``rows`` and ``nnz`` override the formula-derived sizes when given.
    """

    k: int
    epsilon: float
    delta: float
    c_s: float = 4.0
    c_b: float = 2.0
    rows: int | None = None
    nnz: int | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ContractViolation("plan rank must be at least 1")
        if not (0 < self.epsilon and 0 < self.delta < 1):
            raise ContractViolation("plan needs epsilon > 0 and delta in (0, 1)")

    @classmethod
    def from_settings(
        cls,
        k: int,
        epsilon: float,
        delta: float,
        settings: Settings = THEORY,
        rows: int | None = None,
        nnz: int | None = None,
    ) -> "EmbeddingPlan":
        return cls(k, epsilon, delta, settings.sketch_c_s, settings.sketch_c_b, rows, nnz)

    def rows_for(self, n: int) -> int:
        if self.rows is not None:
            s = self.rows
        else:
            lg = log_floor(1.0 / (self.delta * self.epsilon))
            s = math.ceil(self.c_s * (self.k + lg) / self.epsilon**2)
        return int(max(1, min(n, s)))

    def nnz_for(self, s: int) -> int:
        if self.nnz is not None:
            b = self.nnz
        else:
            lg = log_floor(self.k / (self.delta * self.epsilon))
            b = math.ceil(self.c_b * (lg**2 / self.epsilon + lg**3))
        return int(max(1, min(s, b)))


@dataclass(frozen=True, eq=False)
class SparseEmbedding:
    """A concrete sparse embedding; regenerable from ``(s, n, b, seed)``."""

    s: int
    n: int
    b: int
    seed: int
    rows: np.ndarray  # (n, b) row indices, distinct within each column
    signs: np.ndarray  # (n, b) entries ±1/√b

    @property
    def is_identity(self) -> bool:
        return self.s == self.n and self.b == 1 and bool(
            np.array_equal(self.rows[:, 0], np.arange(self.n)) and np.all(self.signs == 1.0)
        )

    def matrix(self) -> sps.csc_matrix:
        # exactly b entries per column, so the column pointer is a fixed stride
        indptr = np.arange(0, self.n * self.b + 1, self.b)
        return sps.csc_matrix((self.signs.ravel(), self.rows.ravel(), indptr), shape=(self.s, self.n))

    def operator(self) -> LinearOperator:
        if self.is_identity:
            return identity(self.n)
        return LinearOperator("sparse-embedding", self.s, self.n, data=self.matrix())

    def record(self) -> tuple[int, int, int, int]:
        """Compact serialization; :func:`regenerate` inverts it."""
        return (self.s, self.n, self.b, self.seed)

    def apply_left(self, A: np.ndarray) -> np.ndarray:
        """``S @ A`` for an explicit ``A`` (charged ``nnz(S)·cols``)."""
        A = np.asarray(A, dtype=float)
        if A.shape[0] != self.n:
            raise ContractViolation("embedding/matrix dimension mismatch")
        if self.is_identity:
            return A.copy()
        cols = 1 if A.ndim == 1 else A.shape[1]
        charge(self.n * self.b * cols)
        return np.asarray(self.matrix() @ A)

    def apply_right_t(self, A: np.ndarray) -> np.ndarray:
        """``A @ Sᵀ`` for an explicit ``A``."""
        A = np.asarray(A, dtype=float)
        if A.shape[1] != self.n:
            raise ContractViolation("embedding/matrix dimension mismatch")
        if self.is_identity:
            return A.copy()
        charge(self.n * self.b * A.shape[0])
        return np.asarray((self.matrix() @ A.T).T)


def _identity_embedding(n: int, seed: int) -> SparseEmbedding:
    return SparseEmbedding(
        n, n, 1, seed, np.arange(n).reshape(n, 1), np.ones((n, 1))
    )


def _distinct_rows(rng: np.random.Generator, n: int, s: int, b: int) -> np.ndarray:
    """``n`` independent draws of ``b`` distinct values from ``range(s)``.

    Collisions are redrawn until each draw holds ``b`` distinct values, so
    every draw is a uniform ``b``-subset.
    """
    if b * b <= s:
        # few collisions: sample with replacement and patch repeated entries
        rows = rng.integers(0, s, size=(n, b))
        todo = np.arange(n)
        while todo.size:
            srt = np.sort(rows[todo], axis=1)
            dup = srt[:, 1:] == srt[:, :-1]
            bad = np.any(dup, axis=1)
            sub, rep = srt[bad], dup[bad]
            sub[:, 1:][rep] = rng.integers(0, s, size=int(rep.sum()))
            todo = todo[bad]
            rows[todo] = sub
        return rows
    # many collisions: fill an occupancy mask per block of draws
    out = np.empty((n, b), dtype=np.int64)
    chunk = max(1, 4_000_000 // s)
    for start in range(0, n, chunk):
        c = min(n, start + chunk) - start
        occ = np.zeros((c, s), dtype=bool)
        need = np.full(c, b)
        idx = np.arange(c)
        while idx.size:
            r = np.repeat(idx, need[idx])
            occ[r, rng.integers(0, s, size=r.size)] = True
            need[idx] = b - occ[idx].sum(axis=1)
            idx = idx[need[idx] > 0]
        out[start : start + c] = (np.flatnonzero(occ) % s).reshape(c, b)
    return out


def make_sparse_embedding(plan: EmbeddingPlan, n: int, seed: int) -> SparseEmbedding:
    """Draw a sparse embedding of ``n`` coordinates sized by ``plan``.

    Returns the identity embedding when the plan asks for ``s >= n`` rows.
    """
    if n < 1:
        raise ContractViolation("n must be positive")
    s = plan.rows_for(n)
    if s >= n:
        return _identity_embedding(n, seed)
    b = plan.nnz_for(s)
    rng = rng_for(seed, "sparse-embedding", s, n, b)
    rows = _distinct_rows(rng, n, s, b)
    signs = (2.0 * rng.integers(0, 2, size=(n, b)) - 1.0) / math.sqrt(b)
    return SparseEmbedding(s, n, b, seed, rows, signs)


def regenerate(record: tuple[int, int, int, int]) -> SparseEmbedding:
    """Rebuild an embedding from its ``(s, n, b, seed)`` record."""
    s, n, b, seed = record
    if s >= n:
        return _identity_embedding(n, seed)
    return make_sparse_embedding(EmbeddingPlan(1, 0.5, 0.5, rows=s, nnz=b), n, seed)


def tail_sum(singular_values: Sequence[float], k: int) -> float:
    """``(1/k) Σ_{i>k} σᵢ²`` for descending singular values."""
    s = np.asarray(singular_values, dtype=float)
    if not 1 <= k <= s.size:
        raise ContractViolation(f"k must lie in [1, {s.size}], got {k}")
    return float(np.sum(s[k:] ** 2) / k)


def regularized_embed(
    A,
    k: int,
    epsilon: float,
    delta: float,
    seed: int,
    settings: Settings = THEORY,
    rows: int | None = None,
    nnz: int | None = None,
) -> tuple[np.ndarray, str]:
    """Left-sketch ``A`` with an embedding built for rank ``2k``.

    With probability ``1 - delta`` the result ``SA`` satisfies
    ``AᵀSᵀSA + νI ≈_{1+6ε} AᵀA + νI`` for ``ν = tail_sum(σ(A), k)``
    (``ν = 0`` when ``k = d``).

    Returns
    -------
    SA : ndarray
        The sketched matrix.
    note : str
        Which regularization level the guarantee refers to.
    """
    A_arr = A.to_dense() if isinstance(A, LinearOperator) else np.asarray(A, dtype=float)
    n, d = A_arr.shape
    if not 1 <= k <= d:
        raise ContractViolation(f"rank k={k} must lie in [1, d={d}]")
    plan = EmbeddingPlan.from_settings(2 * k, epsilon, delta, settings, rows, nnz)
    S = make_sparse_embedding(plan, n, seed)
    note = "nu = 0 (plain subspace embedding)" if k == d else f"nu = tail_sum(sigma(A), {k})"
    return S.apply_left(A_arr), note


def compose_embeddings(embeddings: Sequence[SparseEmbedding]) -> LinearOperator:
    """Product ``S_T ⋯ S_1`` of a list ``[S_1, ..., S_T]`` (applied first to last)."""
    embeddings = list(embeddings)
    if not embeddings:
        raise ContractViolation("need at least one embedding")
    for prev, nxt in zip(embeddings, embeddings[1:]):
        if nxt.n != prev.s:
            raise ContractViolation(
                f"embedding chain mismatch: stage output {prev.s} feeds input {nxt.n}"
            )
    if len(embeddings) == 1:
        return embeddings[0].operator()
    return product(*[e.operator() for e in reversed(embeddings)])


def chain_embedding_plan(
    rank: int,
    epsilon: float,
    delta: float,
    settings: Settings,
    proportional_to: int | None,
    factor: float | None,
) -> EmbeddingPlan:
    """Plan for a sketch inside a solver chain.

    With ``factor`` set the row count is ``⌈factor·proportional_to⌉`` and the
    per-column nonzeros are fixed at 8; otherwise the embedding formula is used.
    """
    if factor is None:
        return EmbeddingPlan.from_settings(rank, epsilon, delta, settings)
    rows = max(1, math.ceil(factor * proportional_to))
    return EmbeddingPlan.from_settings(rank, epsilon, delta, settings, rows=rows, nnz=8)
