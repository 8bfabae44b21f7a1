"""Tests for the bordered almost-block-diagonal linear algebra."""

import numpy as np
import pytest

from ipoc import abd
from ipoc.errors import SingularMatrixError


def _random_abd(rng, N=None, k=None, mz=None, n_p=None):
    N = N or rng.integers(1, 7)
    k = k or rng.integers(1, 5)
    mz = rng.integers(0, k + 1) if mz is None else mz
    n_p = rng.integers(0, 3) if n_p is None else n_p
    A = abd.AbdMatrix(int(N), int(k), int(mz), int(n_p))
    A.blocks[:] = rng.standard_normal(A.blocks.shape)
    A.block_params[:] = rng.standard_normal(A.block_params.shape)
    A.last_rows[:] = rng.standard_normal(A.last_rows.shape)
    A.last_params[:] = rng.standard_normal(A.last_params.shape)
    A.bc0[:] = rng.standard_normal(A.bc0.shape)
    A.bcN[:] = rng.standard_normal(A.bcN.shape)
    A.bcp[:] = rng.standard_normal(A.bcp.shape)
    return A


def test_dimensions_are_square():
    A = abd.AbdMatrix(N=5, k=4, mz=2, n_p=3)
    dense = A.to_dense()
    assert dense.shape == (A.dim, A.dim)
    assert A.nb == 4 - 2 + 3


def test_rejects_bad_dimensions():
    with pytest.raises(ValueError):
        abd.AbdMatrix(N=0, k=2, mz=1, n_p=0)
    with pytest.raises(ValueError):
        abd.AbdMatrix(N=2, k=1, mz=2, n_p=0)  # more mids than nodes


def test_structured_matches_dense_on_100_random_instances():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        A = _random_abd(rng)
        dense = A.to_dense()
        # re-roll matrices that are (nearly) singular by construction
        if np.linalg.cond(dense) > 1e8:
            continue
        rhs = rng.standard_normal(A.dim)
        x_struct = abd.solve(abd.factorize(A), rhs)
        x_dense = np.linalg.solve(dense, rhs)
        scale = max(1.0, np.max(np.abs(x_dense)))
        worst = max(worst, np.max(np.abs(x_struct - x_dense)) / scale)
    assert worst <= 1e-8


def test_sparse_layout_matches_dense():
    rng = np.random.default_rng(7)
    for _ in range(20):
        A = _random_abd(rng)
        np.testing.assert_array_equal(A.to_sparse().toarray(), A.to_dense())


def test_factorization_reusable_for_many_rhs():
    rng = np.random.default_rng(3)
    A = _random_abd(rng, N=4, k=3, mz=1, n_p=2)
    handle = abd.factorize(A)
    dense = A.to_dense()
    for _ in range(5):
        rhs = rng.standard_normal(A.dim)
        np.testing.assert_allclose(handle.solve(rhs),
                                   np.linalg.solve(dense, rhs),
                                   atol=1e-9, rtol=1e-9)


def test_singular_matrix_raises():
    A = abd.AbdMatrix(N=2, k=2, mz=0, n_p=0)
    # all-zero blocks: structurally singular
    with pytest.raises(SingularMatrixError):
        abd.factorize(A)


def test_nonfinite_entries_rejected():
    rng = np.random.default_rng(5)
    A = _random_abd(rng, N=2, k=2, mz=1, n_p=1)
    A.blocks[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        abd.factorize(A)


def test_rhs_shape_checked():
    rng = np.random.default_rng(11)
    A = _random_abd(rng, N=3, k=2, mz=1, n_p=0)
    handle = abd.factorize(A)
    with pytest.raises(ValueError):
        handle.solve(np.zeros(A.dim + 1))
