import numpy as np
import pytest

from sigarchive.errors import DegenerateInput, DimensionMismatch, InvalidRank
from sigarchive.linalg import (
    cosine_similarity,
    cosine_to_columns,
    kkt_violation,
    nmf_factorize,
    nnls_solve,
    reconstruct,
)


# --------------------------------------------------------------------------
# nmf_factorize


def test_nmf_exact_rank_one():
    x = np.outer([1.0, 2.0], [3.0, 1.0, 2.0])
    fact = nmf_factorize(x, 1, seed=0, max_iters=5000, tol=1e-14)
    assert fact.relative_error <= 1e-6
    assert fact.w.shape == (2, 1) and fact.h.shape == (1, 3)


def test_nmf_all_zero_is_degenerate():
    with pytest.raises(DegenerateInput):
        nmf_factorize(np.zeros((3, 3)), 1)


def test_nmf_planted_factors_recovered():
    rng = np.random.default_rng(3)
    x = rng.random((20, 3)) @ rng.random((3, 30))
    fact = nmf_factorize(x, 3, seed=1, max_iters=2000, tol=1e-10)
    assert fact.relative_error <= 1e-3


@pytest.mark.parametrize("k", [0, 4, 2.5])
def test_nmf_rank_out_of_range(k):
    with pytest.raises(InvalidRank):
        nmf_factorize(np.ones((3, 3)), k)


def test_nmf_rejects_negative_and_nan():
    with pytest.raises(DegenerateInput):
        nmf_factorize(np.array([[1.0, -1.0], [1.0, 1.0]]), 1)
    with pytest.raises(DegenerateInput):
        nmf_factorize(np.array([[1.0, np.nan], [1.0, 1.0]]), 1)


def test_nmf_is_bit_reproducible():
    rng = np.random.default_rng(0)
    x = rng.random((15, 25))
    a = nmf_factorize(x, 3, seed=11, max_iters=200)
    b = nmf_factorize(x, 3, seed=11, max_iters=200)
    assert np.array_equal(a.w, b.w) and np.array_equal(a.h, b.h)


def test_nmf_debug_records_monotone_history():
    rng = np.random.default_rng(1)
    x = rng.random((10, 12))
    fact = nmf_factorize(x, 4, seed=2, max_iters=100, tol=1e-12, debug=True)
    hist = fact.objective_history
    assert hist is not None and hist.shape[0] == fact.n_iter + 1
    assert np.all(np.diff(hist) <= 1e-9 * hist[:-1])


def test_nmf_does_not_modify_input():
    x = np.random.default_rng(0).random((6, 7))
    before = x.copy()
    nmf_factorize(x, 2, max_iters=20)
    assert np.array_equal(x, before)


# --------------------------------------------------------------------------
# nnls_solve


def test_nnls_identity():
    res = nnls_solve(np.eye(3), [1.0, 0.0, 2.0])
    np.testing.assert_allclose(res.coefficients, [1.0, 0.0, 2.0])
    assert res.residual_norm == pytest.approx(0.0, abs=1e-12)


def test_nnls_single_column_closed_form():
    res = nnls_solve(np.array([[1.0], [2.0]]), [2.0, 1.0])
    np.testing.assert_allclose(res.coefficients, [4.0 / 5.0])


def test_nnls_active_constraint():
    m = np.array([[1.0, 2.0], [2.0, 1.0]])
    x = np.array([0.0, 3.0])
    # the unconstrained solution [2, -1] violates h >= 0
    assert np.linalg.solve(m, x)[1] < 0
    res = nnls_solve(m, x)
    np.testing.assert_allclose(res.coefficients, [1.2, 0.0], atol=1e-12)
    grad = m.T @ (m @ res.coefficients - x)
    assert abs(grad[0]) < 1e-12
    assert grad[1] >= 0
    assert kkt_violation(m, x, res.coefficients) < 1e-12


def test_nnls_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        nnls_solve(np.eye(3), [1.0, 2.0])


def test_nnls_zero_vector():
    res = nnls_solve(np.eye(2), [0.0, 0.0])
    assert np.all(res.coefficients == 0)


def test_nnls_rank_deficient_matrix():
    m = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]])
    x = np.array([2.0, 1.0, 3.0])
    res = nnls_solve(m, x)
    assert res.residual_norm < 1e-10
    assert kkt_violation(m, x, res.coefficients) < 1e-8


# --------------------------------------------------------------------------
# reconstruct and cosine


def test_reconstruct_examples():
    np.testing.assert_allclose(reconstruct(np.eye(2), [3.0, 4.0]), [3.0, 4.0])
    np.testing.assert_allclose(reconstruct(np.eye(2), [0.0, 0.0]), [0.0, 0.0])
    np.testing.assert_allclose(reconstruct([[1.0, 0.0], [1.0, 1.0]], [2.0, 3.0]), [2.0, 5.0])


def test_reconstruct_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        reconstruct(np.eye(2), [1.0, 2.0, 3.0])


@pytest.mark.parametrize(
    "a,b,expected",
    [
        ([1, 2, 3], [1, 2, 3], 1.0),
        ([1, 0], [0, 1], 0.0),
        ([1, 1], [1, 0], 0.70710678),
        ([0, 0], [1, 0], 0.0),
    ],
)
def test_cosine_examples(a, b, expected):
    assert cosine_similarity(a, b) == pytest.approx(expected, abs=1e-8)


def test_cosine_length_mismatch():
    with pytest.raises(DimensionMismatch):
        cosine_similarity([1, 2], [1, 2, 3])


def test_cosine_to_columns_matches_pairwise():
    rng = np.random.default_rng(0)
    m = rng.random((5, 4))
    m[:, 2] = 0.0
    v = rng.random(5)
    expected = [cosine_similarity(m[:, j], v) for j in range(4)]
    np.testing.assert_allclose(cosine_to_columns(m, v), expected)
