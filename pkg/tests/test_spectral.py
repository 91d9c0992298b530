import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from pflow.errors import InputError
from pflow.spectral import adapted_gram, lifted_gram, matrix_exponential, spectral_decompose


def _span_equal(V, W):
    return np.linalg.matrix_rank(np.hstack([V, W]), tol=1e-8) == V.shape[1] == W.shape[1]


def test_diagonal_exponents_and_axes():
    sp = spectral_decompose(np.diag([2.0, 1.0, -1.0]))
    assert sp.exponents == (2.0, 1.0, -1.0)
    for k, space in enumerate(sp.spaces):
        assert _span_equal(space, np.eye(3)[:, [k]])
    assert sp.center_index is None
    np.testing.assert_allclose(sp.gram, np.eye(3), atol=1e-12)


def test_zero_matrix_is_all_center():
    sp = spectral_decompose(np.zeros((3, 3)))
    assert sp.exponents == (0.0,)
    assert sp.center_index == 0
    assert sp.dims() == [3]
    np.testing.assert_allclose(sp.proj_hyperbolic, 0.0)
    np.testing.assert_allclose(sp.proj_center, np.eye(3))


def test_rotation_block_groups_by_real_part():
    A = np.array([[1.0, 1, 0], [-1, 1, 0], [0, 0, -1]])
    sp = spectral_decompose(A)
    assert sp.exponents == pytest.approx((1.0, -1.0))
    assert _span_equal(sp.spaces[0], np.eye(3)[:, :2])
    assert _span_equal(sp.spaces[1], np.eye(3)[:, [2]])


def test_jordan_block_keeps_generalized_space():
    A = np.array([[1.0, 1, 0], [0, 1, 0], [0, 0, -1]])
    sp = spectral_decompose(A)
    assert sp.dims() == [2, 1]
    G = sp.gram
    # the two spaces are orthogonal in the adapted metric
    assert abs(sp.spaces[0][:, 0] @ G @ sp.spaces[1][:, 0]) < 1e-10
    assert abs(sp.spaces[0][:, 1] @ G @ sp.spaces[1][:, 0]) < 1e-10
    # and still A-invariant
    for V in sp.spaces:
        assert np.linalg.matrix_rank(np.hstack([V, A @ V]), tol=1e-8) == V.shape[1]


def test_adapted_gram_for_skew_spaces():
    spaces = [np.array([[1.0], [1.0]]), np.array([[1.0], [-1.0]])]
    G = adapted_gram(spaces)
    np.testing.assert_allclose(G, G.T)
    assert np.linalg.eigvalsh(G).min() > 0
    assert abs(np.array([1.0, 1]) @ G @ np.array([1.0, -1])) < 1e-12

    spaces = [np.array([[1.0], [0.0]]), np.array([[1.0], [1.0]])]
    G = adapted_gram(spaces)
    assert abs(np.array([1.0, 0]) @ G @ np.array([1.0, 1])) < 1e-12


def test_projections_sum_to_identity():
    A = np.array([[2.0, 1, 0, 0], [0, -1, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]])
    sp = spectral_decompose(A)
    total = sum(sp.projection(i) for i in range(len(sp.exponents)))
    np.testing.assert_allclose(total, np.eye(4), atol=1e-10)
    np.testing.assert_allclose(sp.proj_center + sp.proj_hyperbolic, np.eye(4), atol=1e-10)
    np.testing.assert_allclose(sp.proj_plus + sp.proj_minus, sp.proj_hyperbolic, atol=1e-10)


def test_index_of():
    sp = spectral_decompose(np.diag([2.0, 1.0, -1.0]))
    assert sp.index_of(1.0) == 1
    with pytest.raises(InputError):
        sp.index_of(0.5)


@pytest.mark.parametrize("A", [np.array([[np.nan]]), np.ones((2, 3)), np.zeros((0, 0))])
def test_rejects_bad_matrices(A):
    with pytest.raises(InputError):
        spectral_decompose(A)


def test_lifted_gram_appends_unit_entry():
    G = np.array([[2.0, 0.5], [0.5, 1.0]])
    L = lifted_gram(G)
    np.testing.assert_allclose(L[:2, :2], G)
    assert L[2, 2] == 1.0 and not L[2, :2].any() and not L[:2, 2].any()


def test_matrix_exponential_closed_forms():
    np.testing.assert_allclose(matrix_exponential(np.zeros((3, 3)), 7.0), np.eye(3))
    np.testing.assert_allclose(
        matrix_exponential(np.diag([2.0, 1.0, -1.0]), 1.0), np.diag([math.e**2, math.e, 1 / math.e]), rtol=1e-14
    )
    R = matrix_exponential(np.array([[0.0, 1], [-1, 0]]), math.pi / 2)
    np.testing.assert_allclose(R, [[0, 1], [-1, 0]], atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3))
def test_matrix_exponential_group_property(seed, t):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(3, 3))
    left = matrix_exponential(M, t) @ matrix_exponential(M, 0.5)
    np.testing.assert_allclose(left, matrix_exponential(M, t + 0.5), rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(matrix_exponential(M, t), expm(M * t), rtol=1e-9, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_decomposition_accounts_for_dimension(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    S = rng.normal(size=(n, n)) + 3 * np.eye(n)
    D = np.diag(rng.choice([-2.0, -1.0, 0.0, 1.0, 2.0], size=n))
    A = S @ D @ np.linalg.inv(S)
    sp = spectral_decompose(A, group_tol=1e-6)
    assert sum(sp.dims()) == n
    V = np.hstack(sp.spaces)
    assert np.linalg.matrix_rank(V) == n
    # A-invariance: A V_i stays in span V_i
    for Vi in sp.spaces:
        coef, *_ = np.linalg.lstsq(Vi, A @ Vi, rcond=None)
        np.testing.assert_allclose(Vi @ coef, A @ Vi, atol=1e-6 * max(1.0, np.abs(A).max()))
