import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from blockcg.errors import DimensionMismatch, NotPositiveDefinite, RankDeficient
from blockcg.linalg import (
    SpdOperator,
    SpectralDecomposition,
    ainvf_inner,
    ainvf_norm,
    cholesky_factor,
    least_squares,
    op_norm_ainv,
    qr_tall,
    sym_eig,
)

from conftest import random_spd

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_cholesky_reconstructs(rng):
    A = random_spd(9, rng)
    L = cholesky_factor(A)
    assert np.allclose(np.triu(L, 1), 0.0)
    assert np.allclose(L @ L.T, A, atol=1e-12 * np.linalg.norm(A))


def test_cholesky_reports_first_bad_pivot():
    with pytest.raises(NotPositiveDefinite) as info:
        cholesky_factor(np.diag([1.0, -1.0, 2.0]))
    assert info.value.index == 1


def test_cholesky_rejects_rectangular():
    with pytest.raises(DimensionMismatch):
        cholesky_factor(np.ones((3, 2)))


def test_qr_tall_properties(rng):
    M = rng.standard_normal((10, 3))
    Q, R = qr_tall(M)
    assert np.allclose(Q.T @ Q, np.eye(3), atol=1e-14)
    assert np.allclose(np.tril(R, -1), 0.0)
    assert np.all(np.diag(R) >= 0)
    assert np.allclose(Q @ R, M)


def test_qr_tall_detects_dependent_column(rng):
    M = rng.standard_normal((8, 2))
    M = np.column_stack([M, M[:, 0] + 2 * M[:, 1]])
    with pytest.raises(RankDeficient) as info:
        qr_tall(M)
    assert info.value.column == 2


def test_qr_tall_scale_argument(rng):
    M = 1e-14 * rng.standard_normal((6, 2))
    qr_tall(M)  # relative to its own norm this block is fine
    with pytest.raises(RankDeficient):
        qr_tall(M, scale=1.0)


def test_sym_eig_diagonal():
    d = sym_eig(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(d.eigenvalues, [1, 2, 3])
    assert np.allclose(np.abs(d.eigenvectors), np.eye(3)[:, [1, 2, 0]])


@settings(max_examples=30, deadline=None)
@given(arrays(float, (6, 6), elements=finite))
def test_sym_eig_decomposes(M):
    S = M + M.T
    d = sym_eig(S)
    V, w = d.eigenvectors, d.eigenvalues
    assert np.all(np.diff(w) >= -1e-12)
    assert np.allclose(V.T @ V, np.eye(6), atol=1e-10)
    assert np.allclose(S @ V, V * w, atol=1e-9 * max(1.0, np.abs(S).max()))
    lead = V[np.argmax(np.abs(V), axis=0), np.arange(6)]
    assert np.all(lead > 0)


def test_operator_symmetrizes_and_flags():
    M = np.array([[2.0, 1.0], [0.0, 2.0]])
    A = SpdOperator(M)
    assert A.was_asymmetric
    assert np.allclose(A.entries, [[2, 0.5], [0.5, 2]])
    assert not SpdOperator(np.eye(2)).was_asymmetric


def test_operator_is_read_only():
    A = SpdOperator(np.eye(3))
    with pytest.raises(ValueError):
        A.entries[0, 0] = 5.0


def test_operator_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        SpdOperator(np.diag([1.0, 0.0]))


def test_operator_solve_and_half_solve(spd12, rng):
    V = rng.standard_normal((12, 3))
    assert np.allclose(spd12.apply(spd12.solve(V)), V)
    H = spd12.half_solve(V)
    assert np.allclose(spd12.chol @ H, V)


def test_operator_dimension_checks(spd12):
    with pytest.raises(DimensionMismatch):
        spd12.apply(np.ones((5, 2)))


def test_operator_given_decomposition_is_used():
    dec = SpectralDecomposition(np.array([1.0, 4.0]), np.eye(2))
    A = SpdOperator(np.diag([1.0, 4.0]), decomposition=dec)
    assert A.eig() is dec
    assert A.norm_2 == 4.0


def test_ainvf_matches_explicit_inverse(spd12, rng):
    V, W = rng.standard_normal((2, 12, 3))
    expected = np.trace(V.T @ np.linalg.inv(spd12.entries) @ W)
    assert ainvf_inner(spd12, V, W) == pytest.approx(expected, rel=1e-10)
    assert ainvf_norm(spd12, V) ** 2 == pytest.approx(ainvf_inner(spd12, V, V), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(float, (12, 2), elements=finite), arrays(float, (12, 2), elements=finite))
def test_ainvf_cauchy_schwarz(V, W):
    A = SpdOperator(random_spd(12, np.random.default_rng(7)))
    assert abs(ainvf_inner(A, V, W)) <= ainvf_norm(A, V) * ainvf_norm(A, W) * (1 + 1e-12) + 1e-300


def test_ainvf_norm_survives_tiny_blocks(spd12, rng):
    V = rng.standard_normal((12, 2))
    assert ainvf_norm(spd12, V * 1e-200) == pytest.approx(ainvf_norm(spd12, V) * 1e-200, rel=1e-12)


def test_ainvf_norm_squared_adds_over_columns(spd12, rng):
    V = rng.standard_normal((12, 4))
    parts = sum(ainvf_norm(spd12, V[:, [i]]) ** 2 for i in range(4))
    assert ainvf_norm(spd12, V) ** 2 == pytest.approx(parts, rel=1e-12)


def test_ainvf_nonconforming(spd12):
    with pytest.raises(DimensionMismatch):
        ainvf_inner(spd12, np.ones((12, 2)), np.ones((12, 3)))


def test_least_squares_full_rank(rng):
    M = rng.standard_normal((15, 4))
    B = rng.standard_normal((15, 3))
    C, rank = least_squares(M, B, return_rank=True)
    assert rank == 4
    assert np.allclose(C, np.linalg.lstsq(M, B, rcond=None)[0])


def test_least_squares_rank_deficient_basic_solution(rng):
    M = rng.standard_normal((15, 3))
    M = np.column_stack([M, M[:, 0]])
    B = rng.standard_normal((15, 2))
    C, rank = least_squares(M, B, return_rank=True)
    assert rank == 3
    assert np.sum(np.all(C == 0.0, axis=1)) == 1
    best = np.linalg.lstsq(M, B, rcond=None)[0]
    assert np.linalg.norm(M @ C - B) == pytest.approx(np.linalg.norm(M @ best - B), rel=1e-10)


def test_least_squares_zero_matrix():
    C = least_squares(np.zeros((4, 2)), np.ones((4, 1)))
    assert np.all(C == 0.0)


def test_op_norm_ainv_identity_is_spectral_norm(rng):
    M = rng.standard_normal((5, 5))
    assert op_norm_ainv(SpdOperator(np.eye(5)), M) == pytest.approx(np.linalg.norm(M, 2), rel=1e-12)


def test_op_norm_ainv_matches_similarity(spd12, rng):
    # the A^{-1} geometry is Euclidean after the change of variables x -> A^{-1/2} x
    M = rng.standard_normal((12, 12))
    half = scipy.linalg.sqrtm(spd12.entries).real
    expected = np.linalg.norm(np.linalg.solve(half, M @ half), 2)
    assert op_norm_ainv(spd12, M) == pytest.approx(expected, rel=1e-8)
