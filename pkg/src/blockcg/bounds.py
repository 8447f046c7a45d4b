"""A-posteriori bounds for block CG residuals.

Two bounds on ``||R_{m+j}||`` (all norms are A^{-1}-Frobenius) are computed
from the state of a run at step ``m``:

* the subspace bound ``b1``: a least-squares optimal direction in
  ``A K_j(A, R_m)`` whose components inside a chosen invariant subspace are
  damped by the gap ``gamma_m`` between that subspace and ``A Z`` (``Z`` the
  matching Ritz vectors);
* the spectral bound ``b2 = alpha * ||Rbar_j||``, where ``Rbar_j`` is the
  residual of a comparison run started from ``R_m`` with the invariant
  subspace components removed and ``alpha`` compares Ritz values to
  eigenvalues.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    Breakdown,
    DegenerateDenominator,
    DimensionMismatch,
    InsufficientRitz,
    RankCollapse,
    RankDeficient,
)
from .krylov import RitzSet, comparison_process, lanczos_init, lanczos_step
from .linalg import ainvf_norm, as_block, least_squares, op_norm_ainv, qr_tall

log = logging.getLogger(__name__)

__all__ = [
    "DeflationTarget",
    "BoundConfig",
    "BoundSeries",
    "SpectralProjector",
    "AlphaFactor",
    "SubspaceBound",
    "deflation_target",
    "spectral_projector",
    "ritz_subspace",
    "gamma",
    "gamma_crosscheck",
    "subspace_bound_series",
    "alpha_factor",
    "spectral_bound_series",
    "trace_identity_check",
    "bound_config",
    "compute_bounds",
]

# a single Ritz/eigenvalue ratio above this marks alpha as unreliable
AMPLIFICATION_LIMIT = 100.0
DENOMINATOR_RTOL = 1e-14
SMALL_ANGLE = 0.1
CLUSTER_RTOL = 1e-12


@dataclass(frozen=True)
class DeflationTarget:
    """The ``k1`` lowest and ``k2`` highest eigenvectors of ``A``."""

    k1: int
    k2: int
    Q: np.ndarray
    lambdas: np.ndarray

    @property
    def k(self):
        return self.k1 + self.k2


def _cluster(w, i, tol):
    """Index range ``[a, b)`` of the eigenvalues equal to ``w[i]``."""
    a, b = i, i + 1
    while a > 0 and w[i] - w[a - 1] <= tol:
        a -= 1
    while b < len(w) and w[b] - w[i] <= tol:
        b += 1
    return a, b


def _align_cut(V, w, cut, R0, tol, top):
    # The selection boundary ``cut`` splits a repeated eigenvalue. Any basis
    # of that eigenspace is a set of eigenvectors; rotate it so the selected
    # columns are the directions R0 actually excites.
    a, b = _cluster(w, cut - 1 if not top else cut, tol)
    E = V[:, a:b]
    U = np.linalg.svd(E.T @ R0, full_matrices=True)[0]
    if top:
        U = U[:, ::-1]
    V[:, a:b] = E @ U


def deflation_target(A, k1, k2=0, align_with=None):
    """Eigenvectors to deflate: the ``k1`` lowest and ``k2`` highest.

    When a boundary of the selection falls inside a repeated eigenvalue and
    ``align_with`` (normally ``R_0``) is given, the basis of that eigenspace
    is rotated so the selected vectors span the part of it seen by the block
    Krylov space.
    """
    if k1 < 0 or k2 < 0 or k1 + k2 < 1:
        raise ValueError(f"need k1, k2 >= 0 and k1 + k2 >= 1, got ({k1}, {k2})")
    dec = A.eig()
    n = len(dec)
    if k1 + k2 > n:
        raise ValueError(f"cannot deflate {k1 + k2} eigenpairs of a {n}x{n} matrix")
    w, V = dec.eigenvalues, dec.eigenvectors
    if align_with is not None and k1 + k2 < n:
        R0 = as_block(align_with, n)
        tol = CLUSTER_RTOL * (w[-1] - w[0])
        if 0 < k1 < n and w[k1] - w[k1 - 1] <= tol:
            V = V.copy()
            _align_cut(V, w, k1, R0, tol, top=False)
        if 0 < k2 < n and w[n - k2] - w[n - k2 - 1] <= tol:
            V = V.copy()
            _align_cut(V, w, n - k2, R0, tol, top=True)
    Q = np.hstack([V[:, :k1], V[:, n - k2:]])
    return DeflationTarget(k1, k2, Q, w)


class SpectralProjector:
    """Applies ``Q Q^T`` and ``I - Q Q^T`` without forming ``n x n`` matrices."""

    def __init__(self, Q):
        self.Q = as_block(Q)

    def __call__(self, V):
        return self.Q @ (self.Q.T @ V)

    def complement(self, V):
        return V - self(V)


def spectral_projector(Q):
    return SpectralProjector(Q)


@dataclass(frozen=True)
class BoundConfig:
    m: int
    j_max: int
    target: DeflationTarget
    ritz_source: RitzSet
    multiplicity_mode: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("bounds start at m >= 1")
        if self.j_max < 0:
            raise ValueError("j_max must be non-negative")


def bound_config(A, trace, m, j_max, k1, k2=0, multiplicity_mode=None):
    """Build a :class:`BoundConfig` for step ``m`` of ``trace``.

    ``multiplicity_mode`` defaults to on when the ``k1`` lowest eigenvalues
    coincide (and ``k1 > 1``).
    """
    if m > trace.iterations:
        raise ValueError(f"trace stops at m={trace.iterations}, bounds requested at m={m}")
    target = deflation_target(A, k1, k2, align_with=trace.residual(0))
    if multiplicity_mode is None:
        low = target.lambdas[:k1]
        multiplicity_mode = k1 > 1 and bool(np.all(low - low[0] <= _eq_tol(target.lambdas)))
    return BoundConfig(m, j_max, target, trace.ritz(m), multiplicity_mode)


def _eq_tol(lambdas):
    return DENOMINATOR_RTOL * (lambdas[-1] - lambdas[0])


def _select_ritz(ritz, k1, k2):
    values = np.asarray(ritz.values if isinstance(ritz, RitzSet) else ritz, dtype=float)
    if len(values) < k1 + k2:
        raise InsufficientRitz(f"{len(values)} Ritz values available, {k1 + k2} needed")
    return values


def ritz_subspace(A, ritz, target):
    """``Y = A Z`` with ``Z`` the Ritz vectors paired with the deflation target."""
    _select_ritz(ritz, target.k1, target.k2)
    V = ritz.vectors
    Z = np.hstack([V[:, :target.k1], V[:, V.shape[1] - target.k2:]])
    return A.apply(Z)


def _whitened_orth(A, X):
    try:
        Q, _ = qr_tall(A.half_solve(X))
    except RankDeficient as exc:
        raise RankCollapse(f"basis lost rank after mapping through L^-1 (column {exc.column})") from exc
    return Q


def _gamma_raw(A, Y, Q):
    Y, Q = as_block(Y, A.dim), as_block(Q, A.dim)
    if Y.shape[1] != Q.shape[1]:
        raise DimensionMismatch(f"subspace dimensions differ: {Y.shape[1]} vs {Q.shape[1]}")
    Qy = _whitened_orth(A, Y)
    Qq = _whitened_orth(A, Q)
    cosines = np.linalg.svd(Qy.T @ Qq, compute_uv=False)
    g = math.sqrt(max(0.0, 1.0 - float(cosines.min()) ** 2))
    if g < SMALL_ANGLE:
        # cos-based formula loses relative accuracy for small angles
        g = float(np.linalg.svd(Qq - Qy @ (Qy.T @ Qq), compute_uv=False).max())
    return g


def gamma(A, Y, Q):
    """Sine of the largest canonical angle between ``range(Y)`` and ``range(Q)``
    in the A^{-1} inner product, clamped to ``[0, 1]``."""
    return min(1.0, max(0.0, _gamma_raw(A, Y, Q)))


def gamma_crosscheck(A, Y, Q):
    """``||(I - P_Y) Q Q^T||`` as an A^{-1}-operator norm, with ``P_Y`` the
    A^{-1}-orthogonal projector onto ``range(Y)``. Forms ``n x n`` matrices."""
    Y, Q = as_block(Y, A.dim), as_block(Q, A.dim)
    Yhat = A.chol @ _whitened_orth(A, Y)  # Yhat^T A^{-1} Yhat = I
    P_Y = Yhat @ A.solve(Yhat).T
    P_Q = Q @ Q.T
    return op_norm_ainv(A, P_Q - P_Y @ P_Q)


@dataclass(frozen=True)
class SubspaceBound:
    b1: np.ndarray
    b1_ls_sqrt2: np.ndarray
    directions: list
    basis_width: list
    well_posed: bool


def _krylov_prefixes(A, R, j_max):
    """Lanczos blocks of ``K_{j_max}(A, R)``; fewer if the run breaks down."""
    state = lanczos_init(A, R, reorth=True)
    for _ in range(j_max - 1):
        try:
            lanczos_step(state, A)
        except Breakdown:
            break
    return state.basis[:j_max]


def subspace_bound_series(A, trace, cfg, gamma_m=None):
    """Subspace bound ``b1[j]`` for ``j = 0..cfg.j_max``.

    For each ``j`` the stacked problem
    ``min_C ||[L^{-1}(I-P_Q); gamma L^{-1} P_Q](R_m - A V C)||_F`` is solved
    over a basis ``V`` of ``K_j(A, R_m)``; the minimiser ``D = A V C`` is then
    substituted into ``||(I-P_Q)(R_m-D)|| + gamma ||P_Q(R_m-D)||``. The
    scaled least-squares value ``sqrt(2) * min`` is returned alongside.
    """
    Rm = trace.residual(cfg.m)
    P = spectral_projector(cfg.target.Q)
    if gamma_m is None:
        gamma_m = gamma(A, ritz_subspace(A, cfg.ritz_source, cfg.target), cfg.target.Q)

    def parts(E):
        return ainvf_norm(A, P.complement(E)), ainvf_norm(A, P(E))

    out_of, inside = parts(Rm)
    b1 = [out_of + gamma_m * inside]
    b1_ls = [math.sqrt(2.0) * math.hypot(out_of, gamma_m * inside)]
    directions = [np.zeros_like(Rm)]
    widths = [0]
    well_posed = True
    if cfg.j_max > 0:
        s = Rm.shape[1]
        blocks = _krylov_prefixes(A, Rm, cfg.j_max)
        AV = A.apply(np.hstack(blocks))
        top = A.half_solve(P.complement(AV))
        bottom = gamma_m * A.half_solve(P(AV))
        rhs = np.vstack([A.half_solve(P.complement(Rm)), gamma_m * A.half_solve(P(Rm))])
        for j in range(1, cfg.j_max + 1):
            w = min(j, len(blocks)) * s
            M = np.vstack([top[:, :w], bottom[:, :w]])
            C, rank = least_squares(M, rhs, return_rank=True)
            if rank < w and well_posed:
                well_posed = False
                log.warning("subspace bound at m=%d, j=%d: stacked system has rank %d < %d", cfg.m, j, rank, w)
            D = AV[:, :w] @ C
            out_of, inside = parts(Rm - D)
            b1.append(out_of + gamma_m * inside)
            b1_ls.append(math.sqrt(2.0) * float(np.linalg.norm(M @ C - rhs)))
            directions.append(D)
            widths.append(w)
    return SubspaceBound(np.array(b1), np.array(b1_ls), directions, widths, well_posed)


@dataclass(frozen=True)
class AlphaFactor:
    value: float
    unreliable: bool
    max_ratio: float

    def __float__(self):
        return self.value


def _products(lambdas, candidates, thetas, anchors, upper):
    """Products over the deflated pairs, evaluated at every candidate eigenvalue.

    Returns (products, largest single ratio, smallest denominator).
    """
    lam = lambdas[candidates][:, None]
    if upper:
        num = np.abs(anchors[None, :] - lam)
        den = np.abs(thetas[None, :] - lam)
    else:
        num = np.abs(lam - anchors[None, :])
        den = np.abs(lam - thetas[None, :])
    if np.any(den == 0.0):
        raise DegenerateDenominator("a Ritz value coincides with a comparison eigenvalue")
    ratios = num / den
    prod = np.prod((thetas / anchors)[None, :] * ratios, axis=1)
    return prod, float(ratios.max()), float(den.min())


def alpha_factor(lambdas, ritz, k1, k2=0, multiplicity_mode=False):
    """Spectral amplification factor ``alpha_{m,k1,k2}``.

    The lower product (``k1`` smallest Ritz values against the ``k1``
    smallest eigenvalues) and the upper product (``k2`` largest) are each
    maximised over the non-deflated eigenvalues and multiplied. Candidate
    eigenvalues equal to a deflated one are skipped. With
    ``multiplicity_mode`` the ``k1`` lowest eigenvalues must coincide and the
    common value is used for each of them.

    The value is never capped; ``unreliable`` is set when a single ratio
    exceeds ``AMPLIFICATION_LIMIT`` or a denominator is at roundoff level.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    theta = _select_ritz(ritz, k1, k2)
    n = len(lambdas)
    if k1 < 0 or k2 < 0 or k1 + k2 < 1 or k1 + k2 >= n:
        raise ValueError(f"invalid deflation counts ({k1}, {k2}) for n={n}")
    eq = _eq_tol(lambdas)
    low = lambdas[:k1].copy()
    if multiplicity_mode and k1:
        if np.any(np.abs(low - low[0]) > eq):
            raise ValueError("multiplicity_mode needs the k1 lowest eigenvalues to coincide")
        low[:] = low[0]
    high = lambdas[n - k2:][::-1]
    deflated = np.concatenate([low, high])
    candidates = np.arange(k1, n - k2)
    keep = np.all(np.abs(lambdas[candidates][:, None] - deflated[None, :]) > eq, axis=1)
    candidates = candidates[keep]
    if len(candidates) == 0:
        return AlphaFactor(1.0, False, 1.0)

    value, max_ratio, min_den = 1.0, 0.0, math.inf
    if k1:
        prod, r, d = _products(lambdas, candidates, theta[:k1], low, upper=False)
        value *= float(prod.max())
        max_ratio, min_den = max(max_ratio, r), min(min_den, d)
    if k2:
        prod, r, d = _products(lambdas, candidates, theta[::-1][:k2], high, upper=True)
        value *= float(prod.max())
        max_ratio, min_den = max(max_ratio, r), min(min_den, d)
    span = lambdas[-1] - lambdas[0]
    unreliable = max_ratio > AMPLIFICATION_LIMIT or min_den < DENOMINATOR_RTOL * span
    return AlphaFactor(value, bool(unreliable), max_ratio)


def spectral_bound_series(A, trace, cfg, alpha=None):
    """``(b2, comparison)`` with ``b2[j] = alpha * ||Rbar_j||``."""
    if alpha is None:
        alpha = alpha_factor(cfg.target.lambdas, cfg.ritz_source, cfg.target.k1, cfg.target.k2, cfg.multiplicity_mode)
    P = spectral_projector(cfg.target.Q)
    Rbar0 = P.complement(trace.residual(cfg.m))
    comparison = comparison_process(A, Rbar0, cfg.j_max).norm_series(cfg.j_max + 1)
    return float(alpha) * comparison, comparison


def trace_identity_check(A, trace, m):
    """Relative gap between ``||R_m||^2`` and its eigen-decomposed sum
    ``sum_i |row_i(V^T R_m)|^2 / lambda_i``."""
    dec = A.eig()
    Rm = trace.residual(m)
    rows = dec.eigenvectors.T @ Rm
    weighted = float(np.sum(np.sum(rows ** 2, axis=1) / dec.eigenvalues))
    direct = ainvf_norm(A, Rm) ** 2
    if direct == 0.0:
        return abs(weighted)
    return abs(weighted - direct) / direct


@dataclass(frozen=True)
class BoundSeries:
    m: int
    k1: int
    k2: int
    j_max: int
    gamma_m: float
    alpha: float
    alpha_unreliable: bool
    b1: np.ndarray
    b1_ls_sqrt2: np.ndarray
    b2: np.ndarray
    comparison: np.ndarray
    actual: np.ndarray
    well_posed: bool
    basis_width: tuple
    theta_low: tuple = ()
    theta_high: tuple = ()

    def rows(self):
        """One dict per ``j``, in CSV column order."""
        for j in range(self.j_max + 1):
            yield {
                "j": j,
                "actual": float(self.actual[j]),
                "comparison": float(self.comparison[j]),
                "b1": float(self.b1[j]),
                "b1_ls_sqrt2": float(self.b1_ls_sqrt2[j]),
                "b2": float(self.b2[j]),
                "gamma_m": self.gamma_m,
                "alpha": self.alpha,
            }


def compute_bounds(A, trace, cfg):
    """Both bound series plus the actual residuals ``||R_{m+j}||``.

    Entries of ``actual`` past the end of the run are NaN.
    """
    g = gamma(A, ritz_subspace(A, cfg.ritz_source, cfg.target), cfg.target.Q)
    alpha = alpha_factor(cfg.target.lambdas, cfg.ritz_source, cfg.target.k1, cfg.target.k2, cfg.multiplicity_mode)
    sub = subspace_bound_series(A, trace, cfg, gamma_m=g)
    b2, comparison = spectral_bound_series(A, trace, cfg, alpha=alpha)
    norms = trace.norms
    actual = np.array([norms[cfg.m + j] if cfg.m + j < len(norms) else np.nan for j in range(cfg.j_max + 1)])
    return BoundSeries(
        m=cfg.m,
        k1=cfg.target.k1,
        k2=cfg.target.k2,
        j_max=cfg.j_max,
        gamma_m=g,
        alpha=alpha.value,
        alpha_unreliable=alpha.unreliable,
        b1=sub.b1,
        b1_ls_sqrt2=sub.b1_ls_sqrt2,
        b2=b2,
        comparison=comparison,
        actual=actual,
        well_posed=sub.well_posed,
        basis_width=tuple(sub.basis_width),
        theta_low=tuple(float(x) for x in cfg.ritz_source.values[:cfg.target.k1]),
        theta_high=tuple(float(x) for x in cfg.ritz_source.values[::-1][:cfg.target.k2]),
    )
