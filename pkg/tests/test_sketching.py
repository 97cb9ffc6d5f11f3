import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketchsolve.core import THEORY, ContractViolation, approx_factor, gram_matrix
from sketchsolve.sketching import (
    EmbeddingPlan,
    _distinct_rows,
    chain_embedding_plan,
    compose_embeddings,
    make_sparse_embedding,
    regenerate,
    regularized_embed,
    tail_sum,
)

from conftest import step_matrix


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 300), st.integers(2, 400), st.data())
def test_distinct_rows_per_column(n, s, data):
    b = data.draw(st.integers(1, s))
    rows = _distinct_rows(np.random.default_rng(n * 7 + s), n, s, b)
    assert rows.shape == (n, b)
    assert rows.min() >= 0 and rows.max() < s
    assert all(len(set(r)) == b for r in rows)


def test_embedding_structure_and_regeneration():
    plan = EmbeddingPlan(2, 0.5, 0.1, rows=40, nnz=3)
    S = make_sparse_embedding(plan, 200, seed=9)
    M = S.matrix().toarray()
    assert M.shape == (40, 200)
    assert np.all((M != 0).sum(axis=0) == 3)
    assert np.allclose(np.abs(M[M != 0]), 1 / np.sqrt(3))
    R = regenerate(S.record())
    assert np.array_equal(R.matrix().toarray(), M)
    A = np.random.default_rng(0).standard_normal((200, 5))
    assert np.allclose(S.apply_left(A), M @ A)
    assert np.allclose(S.apply_right_t(A.T), A.T @ M.T)


def test_identity_when_rows_cover_input():
    S = make_sparse_embedding(EmbeddingPlan(50, 0.1, 0.1), 30, seed=1)
    assert S.is_identity
    A = np.arange(60.0).reshape(30, 2)
    assert np.array_equal(S.apply_left(A), A)


def test_compose_embeddings_orders_first_to_last():
    S1 = make_sparse_embedding(EmbeddingPlan(1, 0.5, 0.1, rows=20, nnz=2), 50, 1)
    S2 = make_sparse_embedding(EmbeddingPlan(1, 0.5, 0.1, rows=8, nnz=2), 20, 2)
    C = compose_embeddings([S1, S2])
    assert np.allclose(C.to_dense(), S2.matrix().toarray() @ S1.matrix().toarray())


def test_tail_sum():
    assert tail_sum([3.0, 2.0, 1.0], 1) == pytest.approx(5.0)
    assert tail_sum([3.0, 2.0, 1.0], 2) == pytest.approx(0.5)
    with pytest.raises(ContractViolation):
        tail_sum([1.0], 2)


def test_plan_formula_sizes():
    plan = EmbeddingPlan(2, 0.1, 0.1)
    s = plan.rows_for(10**9)
    assert s == int(np.ceil(4 * (2 + np.log(100)) / 0.01))
    assert plan.rows_for(10) == 10
    chained = chain_embedding_plan(4, 0.1, 0.1, THEORY, proportional_to=16, factor=4.0)
    assert chained.rows == 64 and chained.nnz == 8


def test_regularized_embed_guarantee_small():
    A, s = step_matrix(3000, 32, 2, seed=3)
    SA, note = regularized_embed(A, 2, 0.25, 0.1, seed=4)
    assert SA.shape[0] < 3000
    nu = tail_sum(s, 2)
    assert approx_factor(gram_matrix(SA, nu), gram_matrix(A, nu)) <= 1 + 6 * 0.25
    assert "tail_sum" in note


def test_regularized_embed_rejects_bad_rank():
    with pytest.raises(ContractViolation):
        regularized_embed(np.eye(3), 4, 0.1, 0.1, 0)
