"""Dense real linear-algebra kernels.

Everything here works on small dense matrices (n of a few hundred at most).
Applications of ``A^{-1}`` always go through the cached Cholesky factor of an
:class:`SpdOperator`; no explicit inverse is ever formed.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .errors import DimensionMismatch, NoConvergence, NotPositiveDefinite, RankDeficient

__all__ = [
    "SpdOperator",
    "SpectralDecomposition",
    "as_block",
    "cholesky_factor",
    "qr_tall",
    "sym_eig",
    "ainvf_inner",
    "ainvf_norm",
    "least_squares",
    "op_norm_ainv",
]

QR_RANK_TOL = 1e-13
ASYMMETRY_TOL = 1e-12


def as_block(V, n=None):
    """Return ``V`` as a 2-D float array (a single vector becomes one column)."""
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.ndim != 2:
        raise DimensionMismatch(f"expected a block vector, got shape {V.shape}")
    if n is not None and V.shape[0] != n:
        raise DimensionMismatch(f"block has {V.shape[0]} rows, operator has {n}")
    return V


def cholesky_factor(A):
    """Lower-triangular ``L`` with ``A = L L^T``.

    Raises
    ------
    NotPositiveDefinite
        With the (0-based) index of the first non-positive pivot.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {A.shape}")
    c, info = lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefinite(info - 1)
    if info < 0:  # pragma: no cover - argument error inside LAPACK
        raise ValueError(f"dpotrf: illegal argument {-info}")
    return np.tril(c)


def qr_tall(M, scale=None):
    """Thin QR of an ``n x s`` block with ``diag(R) >= 0``.

    A diagonal entry of ``R`` at or below ``1e-13 * scale`` is treated as a
    rank deficiency. ``scale`` defaults to ``||M||_F``; block Lanczos passes
    the norm of ``A U_i`` so that roundoff-level blocks register as breakdown.
    """
    M = as_block(M)
    n, s = M.shape
    if n < s:
        raise DimensionMismatch(f"qr_tall needs n >= s, got {M.shape}")
    Q, R = np.linalg.qr(M)
    signs = np.where(np.diag(R) < 0.0, -1.0, 1.0)
    Q = Q * signs
    R = signs[:, None] * R
    if scale is None:
        scale = np.linalg.norm(M)
    threshold = QR_RANK_TOL * scale
    diag = np.diag(R)
    for i, d in enumerate(diag):
        if d <= threshold:
            raise RankDeficient(i, float(d))
    return Q, R


@dataclass(frozen=True)
class SpectralDecomposition:
    """Ascending eigenvalues and the matching orthonormal eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __len__(self):
        return len(self.eigenvalues)


def sym_eig(M):
    """Symmetric eigendecomposition, eigenvalues ascending.

    Backed by LAPACK's ``syevd`` (Householder tridiagonalization followed by a
    tridiagonal solver). Each eigenvector is normalised so its entry of largest
    magnitude is positive, which makes the output deterministic.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {M.shape}")
    M = 0.5 * (M + M.T)
    try:
        w, V = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence("sym_eig", str(exc)) from exc
    if V.size:
        lead = V[np.argmax(np.abs(V), axis=0), np.arange(V.shape[1])]
        V = V * np.where(lead < 0.0, -1.0, 1.0)
    return SpectralDecomposition(w, V)


class SpdOperator:
    """Dense symmetric positive definite matrix with a cached Cholesky factor.

    Parameters
    ----------
    entries : array_like, (n, n)
        The matrix. It is symmetrized on construction; ``was_asymmetric``
        records whether the input deviated by more than ``1e-12`` relative.
    decomposition : SpectralDecomposition, optional
        A known eigendecomposition (e.g. for diagonal test matrices). When
        absent, :meth:`eig` computes and caches one on demand.
    """

    def __init__(self, entries, decomposition=None):
        M = np.array(entries, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
            raise DimensionMismatch(f"expected a non-empty square matrix, got shape {M.shape}")
        scale = np.linalg.norm(M)
        self.was_asymmetric = bool(np.linalg.norm(M - M.T) > ASYMMETRY_TOL * scale)
        M = 0.5 * (M + M.T)
        M.setflags(write=False)
        self.entries = M
        self.dim = M.shape[0]
        L = cholesky_factor(M)
        L.setflags(write=False)
        self.chol = L
        if decomposition is not None:
            self.__dict__["_decomposition"] = decomposition

    def __repr__(self):
        return f"SpdOperator(dim={self.dim})"

    @property
    def shape(self):
        return self.entries.shape

    def apply(self, V):
        """``A V``."""
        return self.entries @ as_block(V, self.dim)

    def solve(self, V):
        """``A^{-1} V`` by two triangular solves."""
        return scipy.linalg.cho_solve((self.chol, True), as_block(V, self.dim))

    def half_solve(self, V):
        """``L^{-1} V``; the A^{-1}-F inner product is the Frobenius product of these."""
        return scipy.linalg.solve_triangular(self.chol, as_block(V, self.dim), lower=True)

    def eig(self):
        d = self.__dict__.get("_decomposition")
        if d is None:
            d = sym_eig(self.entries)
            self.__dict__["_decomposition"] = d
        return d

    @cached_property
    def norm_2(self):
        """Spectral norm ``||A||_2`` (the largest eigenvalue)."""
        return float(self.eig().eigenvalues[-1])


def _conforming(A, V, W):
    V = as_block(V, A.dim)
    W = as_block(W, A.dim)
    if V.shape != W.shape:
        raise DimensionMismatch(f"blocks do not conform: {V.shape} vs {W.shape}")
    return V, W


def ainvf_inner(A, V, W):
    """``trace(V^T A^{-1} W)``."""
    V, W = _conforming(A, V, W)
    return float(np.sum(A.half_solve(V) * A.half_solve(W)))


def ainvf_norm(A, V):
    """The A^{-1}-Frobenius norm ``sqrt(trace(V^T A^{-1} V))``."""
    V = as_block(V, A.dim)
    Z = A.half_solve(V)
    # numpy's Frobenius norm squares unscaled entries, so rescale first
    scale = float(np.max(np.abs(Z), initial=0.0))
    if scale == 0.0 or not np.isfinite(scale):
        return scale
    return scale * float(np.linalg.norm(Z / scale))


def least_squares(M, B, return_rank=False):
    """Minimise ``||M C - B||_F`` columnwise by QR with column pivoting.

    Rank-deficient problems return the basic solution: coefficients of the
    pivoted-out columns are zero. With ``return_rank`` the numerical rank
    used is returned as well.
    """
    M = np.asarray(M, dtype=float)
    B = as_block(B)
    p, q = M.shape
    if B.shape[0] != p:
        raise DimensionMismatch(f"rhs has {B.shape[0]} rows, matrix has {p}")
    if p < q:
        raise DimensionMismatch(f"least_squares needs p >= q, got {M.shape}")
    C = np.zeros((q, B.shape[1]))
    if q == 0 or not np.any(M):
        return (C, 0) if return_rank else C
    Q, R, piv = scipy.linalg.qr(M, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > max(p, q) * np.finfo(float).eps * diag[0]))
    C[piv[:rank]] = scipy.linalg.solve_triangular(R[:rank, :rank], Q[:, :rank].T @ B)
    return (C, rank) if return_rank else C


def op_norm_ainv(A, M):
    """Operator norm of ``M`` on R^n with the A^{-1} inner product: ``||L^{-1} M L||_2``."""
    M = np.asarray(M, dtype=float)
    if M.shape != (A.dim, A.dim):
        raise DimensionMismatch(f"expected a {A.dim}x{A.dim} matrix, got {M.shape}")
    return float(np.linalg.norm(A.half_solve(M @ A.chol), 2))
