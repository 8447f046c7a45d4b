import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from blockcg.errors import Breakdown, DimensionMismatch
from blockcg.krylov import (
    block_cg_solve,
    comparison_process,
    krylov_basis,
    lanczos_init,
    lanczos_step,
    ritz,
    ritz_extremes,
)
from blockcg.linalg import SpdOperator, ainvf_norm

from conftest import random_spd


def scalar_cg(A, b, steps):
    """Textbook Hestenes-Stiefel CG; returns the residual vectors."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    out = [r.copy()]
    for _ in range(steps):
        Ap = A @ p
        a = (r @ r) / (p @ Ap)
        x += a * p
        r_new = r - a * Ap
        p = r_new + (r_new @ r_new) / (r @ r) * p
        r = r_new
        out.append(r.copy())
    return out


def run_lanczos(A, R0, steps):
    state = lanczos_init(A, R0)
    for _ in range(steps):
        lanczos_step(state, A)
    return state


def test_lanczos_relation(rng):
    A = SpdOperator(random_spd(30, rng))
    s, m = 3, 5
    state = run_lanczos(A, rng.standard_normal((30, s)), m)
    W = state.w(m)
    T = state.tm(m).assemble()
    E = np.zeros((m * s, s))
    E[-s:] = np.eye(s)
    lhs = A.apply(W)
    rhs = W @ T + state.basis[m] @ state.betas[m - 1] @ E.T
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(lhs)
    assert np.allclose(np.hstack(state.basis).T @ np.hstack(state.basis), np.eye((m + 1) * s), atol=1e-12)


def test_lanczos_starting_block(rng):
    A = SpdOperator(random_spd(10, rng))
    R0 = rng.standard_normal((10, 2))
    state = lanczos_init(A, R0)
    assert np.allclose(state.basis[0] @ state.b0, R0)
    assert np.all(np.diag(state.b0) > 0)


def test_tm_is_symmetric_block_tridiagonal(rng):
    A = SpdOperator(random_spd(20, rng))
    state = run_lanczos(A, rng.standard_normal((20, 2)), 4)
    T = state.tm().assemble()
    assert np.allclose(T, T.T)
    assert np.allclose(np.triu(T, 2 * 2 + 1), 0.0)
    assert np.allclose(T, state.w().T @ A.apply(state.w()), atol=1e-12)


def test_breakdown_on_invariant_subspace():
    A = SpdOperator(np.diag([1.0, 1.0, 2.0, 2.0]))
    state = lanczos_init(A, np.ones(4))
    lanczos_step(state, A)
    with pytest.raises(Breakdown):
        lanczos_step(state, A)
    with pytest.raises(Breakdown):
        lanczos_step(state, A)
    assert state.m == 2


def test_ritz_values_and_vectors(rng):
    A = SpdOperator(random_spd(25, rng))
    state = run_lanczos(A, rng.standard_normal((25, 2)), 6)
    rs = ritz(state)
    assert np.allclose(rs.values, np.linalg.eigvalsh(state.tm().assemble()))
    assert np.allclose(np.linalg.norm(rs.vectors, axis=0), 1.0, atol=1e-10)
    lam = A.eig().eigenvalues
    assert lam[0] - 1e-12 <= rs.values[0] and rs.values[-1] <= lam[-1] + 1e-12
    assert ritz_extremes(state) == pytest.approx((rs.values[0], rs.values[-1]), rel=1e-12)


def test_ritz_values_interlace(rng):
    A = SpdOperator(random_spd(40, rng))
    s = 2
    state = run_lanczos(A, rng.standard_normal((40, s)), 8)
    for m in range(1, 8):
        small = ritz(state, m).values
        big = ritz(state, m + 1).values
        # T_m is a leading principal submatrix of T_{m+1}
        assert np.all(big[:len(small)] <= small + 1e-10)
        assert np.all(small <= big[s:] + 1e-10)


def test_ritz_needs_a_step(rng):
    A = SpdOperator(np.eye(3))
    with pytest.raises(ValueError):
        ritz(lanczos_init(A, np.ones(3)), 0)


def test_scalar_case_matches_textbook_cg(rng):
    n = 40
    M = random_spd(n, rng, cond=50)
    A = SpdOperator(M)
    b = rng.standard_normal(n)
    trace = block_cg_solve(A, b, tol=0.0, max_m=15)
    ref = scalar_cg(M, b, 15)
    for m in range(16):
        r = trace.residual(m)[:, 0]
        assert np.linalg.norm(r - ref[m]) <= 1e-10 * np.linalg.norm(b)


def brute_force_residual(A, R0, m):
    """min over C of ||R0 - A K C||_{A^{-1}-F} with K spanning K_m(A, R0)."""
    K = np.hstack([np.linalg.matrix_power(A.entries, k) @ R0 for k in range(m)])
    K, _ = np.linalg.qr(K)
    target = A.half_solve(R0)
    design = A.half_solve(A.apply(K))
    C = np.linalg.lstsq(design, target, rcond=None)[0]
    return np.linalg.norm(target - design @ C)


@settings(max_examples=15, deadline=None)
@given(st.integers(8, 24), st.integers(1, 3), st.integers(0, 10_000))
def test_block_cg_minimizes_over_krylov_space(n, s, seed):
    rng = np.random.default_rng(seed)
    A = SpdOperator(random_spd(n, rng, cond=20))
    B = rng.standard_normal((n, s))
    X0 = rng.standard_normal((n, s))
    trace = block_cg_solve(A, B, X0, tol=0.0, max_m=min(3, n // s))
    R0 = trace.residual(0)
    for m in range(1, trace.iterations + 1):
        best = brute_force_residual(A, R0, m)
        assert trace.norms[m] == pytest.approx(best, rel=1e-8, abs=1e-12 * trace.norms[0])


@pytest.mark.parametrize("n,s", [(12, 1), (12, 3), (12, 4), (24, 6)])
def test_finite_termination(rng, n, s):
    A = SpdOperator(random_spd(n, rng, cond=10))
    B = rng.standard_normal((n, s))
    trace = block_cg_solve(A, B, tol=1e-10 * np.sqrt(n))
    assert trace.iterations <= n // s
    X = trace.solution()
    assert np.linalg.norm(A.apply(X) - B) <= 1e-8 * np.linalg.norm(B)


def test_shortcut_residual_agrees_with_direct(rng):
    A = SpdOperator(random_spd(60, rng, cond=1e3))
    B = rng.standard_normal((60, 3))
    trace = block_cg_solve(A, B, tol=1e-10, check_every=1)
    r0 = np.linalg.norm(trace.residual(0))
    for rec in trace.records[1:]:
        direct = B - A.apply(trace.solution(rec.m))
        assert np.linalg.norm(rec.residual - direct) <= 1e-8 * r0
        assert rec.direct_gap <= 1e-8 * r0
        assert rec.norm == pytest.approx(ainvf_norm(A, rec.residual))


def test_residual_norm_is_nonincreasing(rng):
    A = SpdOperator(random_spd(50, rng, cond=1e4))
    trace = block_cg_solve(A, rng.standard_normal((50, 2)), tol=1e-10)
    assert np.all(np.diff(trace.norms) <= 1e-12 * trace.norms[0])


def test_max_m_is_reported_not_raised(rng):
    A = SpdOperator(random_spd(50, rng, cond=1e4))
    trace = block_cg_solve(A, np.ones(50), tol=1e-14, max_m=3)
    assert not trace.converged
    assert trace.reason == "max_m"
    assert trace.iterations == 3


def test_zero_residual_converges_at_once():
    A = SpdOperator(np.diag([1.0, 2.0, 3.0]))
    X0 = np.array([[1.0], [0.5], [1 / 3]])
    trace = block_cg_solve(A, np.ones(3), X0)
    assert trace.converged and trace.iterations == 0
    assert np.allclose(trace.solution(), X0)


def test_one_by_one_system():
    trace = block_cg_solve(SpdOperator([[4.0]]), [2.0])
    assert trace.converged and trace.iterations == 1
    assert trace.solution()[0, 0] == pytest.approx(0.5)


def test_exact_breakdown_still_gives_the_solution():
    A = SpdOperator(np.diag([1.0, 1.0, 2.0, 2.0, 3.0]))
    b = np.array([1.0, 1.0, 1.0, 1.0, 0.0])
    trace = block_cg_solve(A, b, tol=1e-300)
    assert trace.reason in ("breakdown", "tol")
    assert np.allclose(A.apply(trace.solution()), b[:, None])


def test_initial_guess_shape_checked():
    A = SpdOperator(np.eye(4))
    with pytest.raises(DimensionMismatch):
        block_cg_solve(A, np.ones((4, 2)), np.ones((4, 3)))


def test_comparison_process_runs_fixed_steps(rng):
    A = SpdOperator(random_spd(30, rng))
    cmp = comparison_process(A, rng.standard_normal((30, 2)), 4)
    assert cmp.iterations == 4
    series = cmp.norm_series(7)
    assert len(series) == 7
    assert series[-1] == series[4]


def test_krylov_basis_spans_power_basis(rng):
    A = SpdOperator(random_spd(20, rng))
    R = rng.standard_normal((20, 2))
    V = krylov_basis(A, R, 3)
    assert V.shape == (20, 6)
    assert np.allclose(V.T @ V, np.eye(6), atol=1e-12)
    P = np.hstack([R, A.apply(R), A.apply(A.apply(R))])
    assert np.linalg.norm(P - V @ (V.T @ P)) <= 1e-10 * np.linalg.norm(P)


def test_krylov_basis_truncates_on_breakdown():
    A = SpdOperator(np.diag([1.0, 2.0, 3.0, 4.0]))
    V = krylov_basis(A, np.array([1.0, 1.0, 0, 0]), 4)
    assert V.shape[1] == 2
