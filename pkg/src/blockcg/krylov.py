"""Block Lanczos, Ritz extraction and the block conjugate gradient solver.

Indexing follows the recurrence directly: after ``m`` block steps the basis
``W_m = [U_0 ... U_{m-1}]`` spans the block Krylov space of dimension ``m``,
``T_m`` is ``ms x ms`` and ``X_m = X_0 + W_m Y_m``.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import Breakdown, DimensionMismatch, NotPositiveDefinite, RankDeficient, TmNotPositiveDefinite
from .linalg import as_block, ainvf_norm, cholesky_factor, qr_tall, sym_eig

log = logging.getLogger(__name__)

__all__ = [
    "BlockTridiagonal",
    "LanczosState",
    "RitzSet",
    "IterationRecord",
    "SolveTrace",
    "lanczos_init",
    "lanczos_step",
    "ritz",
    "ritz_extremes",
    "block_cg_solve",
    "comparison_process",
    "krylov_basis",
]

SHORTCUT_RTOL = 1e-8


@dataclass(frozen=True)
class BlockTridiagonal:
    """``T_m`` stored by blocks: ``diag`` = A_0..A_{m-1}, ``sub`` = B_1..B_{m-1}."""

    diag: tuple
    sub: tuple
    b0: np.ndarray

    @property
    def m(self):
        return len(self.diag)

    @property
    def s(self):
        return self.b0.shape[0]

    def banded(self):
        """Lower banded storage (bandwidth ``s``) for ``scipy.linalg.eigvals_banded``."""
        T = self.assemble()
        N, s = T.shape[0], self.s
        band = np.zeros((s + 1, N))
        for d in range(s + 1):
            band[d, :N - d] = np.diagonal(T, -d)
        return band

    def assemble(self):
        m, s = self.m, self.s
        T = np.zeros((m * s, m * s))
        for i, a in enumerate(self.diag):
            T[i * s:(i + 1) * s, i * s:(i + 1) * s] = a
        for i, b in enumerate(self.sub):
            # b is B_{i+1}: below the diagonal in block row i+1
            T[(i + 1) * s:(i + 2) * s, i * s:(i + 1) * s] = b
            T[i * s:(i + 1) * s, (i + 1) * s:(i + 2) * s] = b.T
        return T


@dataclass
class LanczosState:
    """Mutable state of a block Lanczos run.

    ``basis`` holds U_0..U_m (one block more than ``m`` unless the run broke
    down), ``alphas`` the diagonal blocks A_0..A_{m-1} and ``betas`` the
    triangular factors B_1..B_m. ``tail`` is the last unnormalised block
    ``M_{m-1} = U_m B_m``, kept so the residual can still be formed after a
    breakdown.
    """

    basis: list
    b0: np.ndarray
    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    tail: np.ndarray = None
    reorth: bool = True
    breakdown: tuple = None

    @property
    def m(self):
        return len(self.alphas)

    @property
    def s(self):
        return self.b0.shape[0]

    def tm(self, m=None):
        m = self.m if m is None else m
        if m > self.m:
            raise ValueError(f"only {self.m} steps available, asked for {m}")
        return BlockTridiagonal(tuple(self.alphas[:m]), tuple(self.betas[:m - 1]) if m else (), self.b0)

    def w(self, m=None):
        """The orthonormal basis ``W_m`` as one ``n x ms`` matrix."""
        m = self.m if m is None else m
        if m == 0:
            return np.zeros((self.basis[0].shape[0], 0))
        return np.hstack(self.basis[:m])


@dataclass(frozen=True)
class RitzSet:
    m: int
    values: np.ndarray
    vectors: np.ndarray


def lanczos_init(A, R0, reorth=True):
    """Start block Lanczos from ``R0 = U_0 B_0``."""
    R0 = as_block(R0, A.dim)
    U0, B0 = qr_tall(R0)
    return LanczosState(basis=[U0], b0=B0, reorth=reorth)


def _orthogonalize(M, W):
    # classical Gram-Schmidt, two passes
    for _ in range(2):
        M = M - W @ (W.T @ M)
    return M


def lanczos_step(state, A):
    """Advance ``state`` by one block step (in place) and return it.

    Raises :class:`Breakdown` when ``M_i`` is rank deficient; the state then
    keeps ``A_i`` and ``M_i`` and refuses further steps.
    """
    if state.breakdown is not None:
        raise Breakdown(*state.breakdown)
    i = state.m
    U = state.basis[i]
    AU = A.apply(U)
    a = U.T @ AU
    a = 0.5 * (a + a.T)
    M = AU - U @ a
    if i > 0:
        M -= state.basis[i - 1] @ state.betas[i - 1].T
    if state.reorth:
        M = _orthogonalize(M, np.hstack(state.basis[:i + 1]))
    state.alphas.append(a)
    state.tail = M
    try:
        U_next, B_next = qr_tall(M, scale=np.linalg.norm(AU))
    except RankDeficient as exc:
        state.breakdown = (i, exc.pivot)
        raise Breakdown(i, exc.pivot) from exc
    state.basis.append(U_next)
    state.betas.append(B_next)
    return state


def ritz(state, m=None):
    """Ritz values (ascending) and unit Ritz vectors from ``T_m``."""
    m = state.m if m is None else m
    if m < 1:
        raise ValueError("Ritz values need at least one Lanczos step")
    dec = sym_eig(state.tm(m).assemble())
    return RitzSet(m, dec.eigenvalues, state.w(m) @ dec.eigenvectors)


def ritz_extremes(state, m=None):
    """Smallest and largest Ritz value of ``T_m`` without the full spectrum."""
    m = state.m if m is None else m
    band = state.tm(m).banded()
    N = band.shape[1]
    lo = scipy.linalg.eigvals_banded(band, lower=True, select="i", select_range=(0, 0))
    hi = scipy.linalg.eigvals_banded(band, lower=True, select="i", select_range=(N - 1, N - 1))
    return float(lo[0]), float(hi[0])


@dataclass(frozen=True)
class IterationRecord:
    m: int
    residual: np.ndarray
    norm: float
    coefficients: np.ndarray
    direct_gap: float = None


@dataclass
class SolveTrace:
    """Everything a block CG run produced.

    ``records[m]`` belongs to iteration ``m`` (``records[0]`` is the initial
    residual). ``reason`` is one of ``"tol"``, ``"breakdown"`` or ``"max_m"``.
    """

    records: list
    x0: np.ndarray
    b: np.ndarray
    lanczos: LanczosState
    converged: bool = False
    reason: str = ""
    tol: float = 0.0

    @property
    def iterations(self):
        return self.records[-1].m

    @property
    def norms(self):
        return np.array([r.norm for r in self.records])

    def residual(self, m):
        return self.records[m].residual

    def solution(self, m=None):
        m = self.iterations if m is None else m
        if m == 0:
            return self.x0.copy()
        return self.x0 + self.lanczos.w(m) @ self.records[m].coefficients

    def ritz(self, m):
        return ritz(self.lanczos, m)

    def norm_series(self, length):
        """Residual norms for ``m = 0..length-1``, padded with the last value.

        Padding is only meaningful when the run stopped because the residual
        vanished (converged or exact breakdown).
        """
        norms = self.norms
        if len(norms) >= length:
            return norms[:length]
        return np.concatenate([norms, np.full(length - len(norms), norms[-1])])


def block_cg_solve(A, B, X0=None, max_m=None, tol=1e-8, reorth=True, check_every=5, checkpoints=()):
    """Solve ``A X = B`` by block CG (block Lanczos + Galerkin condition).

    Parameters
    ----------
    A : SpdOperator
    B : array_like, (n, s)
    X0 : array_like, (n, s), optional
        Initial guess, zero by default.
    max_m : int, optional
        Iteration cap, ``ceil(n/s)`` by default.
    tol : float
        Stop once ``||R_m||_{A^{-1}-F} <= tol``. ``tol=0`` runs to ``max_m``
        (or breakdown).
    check_every : int
        Recompute ``B - A X_m`` directly every this many steps (plus
        ``checkpoints`` and the final step) and record its distance to the
        recurrence residual.

    Returns
    -------
    SolveTrace
        Exhausting ``max_m`` is not an exception; inspect ``converged`` and
        ``reason``.
    """
    B = as_block(B, A.dim)
    n, s = B.shape
    X0 = np.zeros_like(B) if X0 is None else as_block(X0, n).copy()
    if X0.shape != B.shape:
        raise DimensionMismatch(f"X0 has shape {X0.shape}, B has {B.shape}")
    if max_m is None:
        max_m = math.ceil(n / s)
    R0 = B - A.apply(X0)
    r0_norm = ainvf_norm(A, R0)
    r0_fro = np.linalg.norm(R0)
    records = [IterationRecord(0, R0, r0_norm, np.zeros((0, s)), 0.0)]
    if r0_norm <= tol or r0_fro == 0.0:
        return SolveTrace(records, X0, B, None, converged=True, reason="tol", tol=tol)

    state = lanczos_init(A, R0, reorth=reorth)
    trace = SolveTrace(records, X0, B, state, tol=tol)
    checkpoints = set(checkpoints)
    for m in range(1, max_m + 1):
        broke = False
        try:
            lanczos_step(state, A)
        except Breakdown:
            broke = True
        T = state.tm(m).assemble()
        try:
            L = cholesky_factor(T)
        except NotPositiveDefinite as exc:
            raise TmNotPositiveDefinite(m) from exc
        rhs = np.zeros((m * s, s))
        rhs[:s] = state.b0
        Y = scipy.linalg.cho_solve((L, True), rhs)
        R = -state.tail @ Y[-s:]
        norm = ainvf_norm(A, R)
        done = norm <= tol or broke or m == max_m
        gap = None
        if m % check_every == 0 or m in checkpoints or done:
            X = X0 + state.w(m) @ Y
            gap = float(np.linalg.norm(R - (B - A.apply(X))))
            if gap > SHORTCUT_RTOL * r0_fro:
                log.warning("residual drift at m=%d: %.3e (||R_0||_F=%.3e)", m, gap, r0_fro)
        records.append(IterationRecord(m, R, norm, Y, gap))
        if norm <= tol:
            trace.converged, trace.reason = True, "tol"
            break
        if broke:
            trace.reason = "breakdown"
            break
    else:
        trace.reason = "max_m"
    return trace


def comparison_process(A, Rbar0, j_max, reorth=True):
    """Block CG on ``A E = Rbar0`` from a zero guess, run for ``j_max`` steps.

    The residual-norm sequence is ``trace.norm_series(j_max + 1)``.
    """
    Rbar0 = as_block(Rbar0, A.dim)
    return block_cg_solve(A, Rbar0, None, max_m=j_max, tol=0.0, reorth=reorth)


def krylov_basis(A, R0, j):
    """Orthonormal basis of the block Krylov space ``K_j(A, R0)``.

    Built from a fresh fully reorthogonalized Lanczos run. If the run breaks
    down the basis stops at the invariant subspace found, so the width may
    be smaller than ``j * s``.
    """
    if j < 1:
        raise ValueError("j must be at least 1")
    state = lanczos_init(A, R0, reorth=True)
    for _ in range(j - 1):
        try:
            lanczos_step(state, A)
        except Breakdown:
            return state.w(state.m)
    return np.hstack(state.basis[:j])
