"""Test matrices, scenario registry and the experiment runner.

Scenarios are pure data: a matrix recipe, the block size, the seed and the
list of ``(m, j_max, k1, k2)`` bound configurations to evaluate. Running one
yields a :class:`RunArtifact` that the command-line front end serialises.

Iteration counts follow the library convention (``m`` = number of block
Lanczos steps taken, so ``R_m`` is the residual after ``m`` steps).
"""
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from . import __version__
from .bounds import bound_config, compute_bounds
from .errors import BlockCGError, NonPositive, PivotLoss
from .krylov import block_cg_solve, ritz_extremes
from .linalg import SpdOperator, SpectralDecomposition

log = logging.getLogger(__name__)

__all__ = [
    "BoundRequest",
    "Scenario",
    "RunArtifact",
    "SCENARIOS",
    "DEFAULT_SEED",
    "spectrum_matrix",
    "example41_spectrum",
    "example43_spectrum",
    "clustered_spectrum",
    "multiplicity_spectrum",
    "poisson2d",
    "ic0",
    "preconditioned_operator",
    "poisson_ic0_operator",
    "get_scenario",
    "registry_grid",
    "with_overrides",
    "env_seed",
    "build_operator",
    "initial_guess",
    "run_scenario",
    "superlinearity_onset",
    "iterations_to_tol",
    "local_ratios",
]

DEFAULT_SEED = 42
ONSET_RTOL = 1e-10


# ---------------------------------------------------------------- matrices

def spectrum_matrix(values):
    """Diagonal :class:`SpdOperator` with the given eigenvalues.

    The eigenvectors are identity columns, handed to the operator so that no
    eigensolver is needed later.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("empty spectrum")
    for v in values:
        if not v > 0.0:
            raise NonPositive(float(v))
    order = np.argsort(values, kind="stable")
    n = values.size
    dec = SpectralDecomposition(values[order], np.eye(n)[:, order])
    return SpdOperator(np.diag(values), decomposition=dec)


def example41_spectrum():
    """Four small outliers then 5, 6, ..., 100 (n = 100)."""
    return np.concatenate([[0.1, 0.2, 0.3, 0.4], np.linspace(5.0, 100.0, 96)])


def example43_spectrum():
    """One eigenvalue near zero then a uniform grid on [0.08, 2.42] (n = 404)."""
    return np.concatenate([[0.0005], np.linspace(0.08, 2.42, 403)])


def _clustered_values():
    return np.concatenate([[0.0005, 0.0015, 0.0025, 0.0035, 0.0045, 0.0055], np.linspace(0.08, 2.42, 398)])


def _multiplicity_values():
    return np.concatenate([np.full(5, 0.0005), np.linspace(0.065, 5.42, 379)])


def clustered_spectrum():
    """Six small clustered eigenvalues below a uniform bulk (n = 404)."""
    return spectrum_matrix(_clustered_values())


def multiplicity_spectrum():
    """0.0005 with multiplicity five below a uniform bulk on [0.065, 5.42] (n = 384)."""
    return spectrum_matrix(_multiplicity_values())


def poisson2d(g):
    """Dense 5-point Laplacian on a ``g x g`` interior grid, row-major ordering."""
    if g < 2:
        raise ValueError(f"grid size must be at least 2, got {g}")
    T = 2.0 * np.eye(g) - np.eye(g, k=1) - np.eye(g, k=-1)
    I = np.eye(g)
    return np.kron(I, T) + np.kron(T, I)


def ic0(A):
    """Incomplete Cholesky factor with the sparsity pattern of ``tril(A)``.

    Right-looking elimination: after column ``k`` is scaled, the rank-one
    update is applied only to entries already in the pattern.

    Raises
    ------
    PivotLoss
        If a pivot becomes non-positive.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    L = np.tril(A).copy()
    pattern = L != 0.0
    for k in range(n):
        if L[k, k] <= 0.0:
            raise PivotLoss(k)
        L[k, k] = np.sqrt(L[k, k])
        rows = k + 1 + np.flatnonzero(pattern[k + 1:, k])
        L[rows, k] /= L[k, k]
        for a, j in enumerate(rows):
            for i in rows[a:]:
                if pattern[i, j]:
                    L[i, j] -= L[i, k] * L[j, k]
    return L


def preconditioned_operator(A, L):
    """``L^{-1} A L^{-T}`` formed densely and symmetrized."""
    A = np.asarray(A, dtype=float)
    X = scipy.linalg.solve_triangular(L, A, lower=True)
    M = scipy.linalg.solve_triangular(L, X.T, lower=True).T
    return SpdOperator(0.5 * (M + M.T))


def poisson_ic0_operator(g=20, precondition=True):
    A = poisson2d(g)
    if not precondition:
        return SpdOperator(A)
    return preconditioned_operator(A, ic0(A))


# ---------------------------------------------------------------- scenarios

@dataclass(frozen=True)
class BoundRequest:
    m: int
    j_max: int
    k1: int
    k2: int = 0


@dataclass(frozen=True)
class Scenario:
    """Everything needed to reproduce one run bit for bit.

    ``matrix`` is ``"spectrum"`` (with ``values``) or ``"poisson"`` (with
    ``grid`` and ``precondition``).
    """

    id: str
    matrix: str
    s: int
    bounds: tuple = ()
    values: tuple = None
    grid: int = None
    precondition: bool = True
    seed: int = DEFAULT_SEED
    tol: float = 1e-8
    max_m: int = None
    note: str = ""

    @property
    def n(self):
        if self.matrix == "spectrum":
            return len(self.values)
        return self.grid * self.grid


def _grid(ms, j_max, k1, k2=0):
    return tuple(BoundRequest(m, j_max, k1, k2) for m in ms)


# bound grids per block size; m values are in library indexing
_EX41 = _grid(range(20, 25), 10, 1) + _grid(range(31, 36), 10, 1)
_EX42 = _grid(range(38, 46), 10, 4) + _grid((49,), 10, 4)
_EX43 = {1: _grid((20, 35, 50), 10, 1), 4: _grid((15, 30, 40), 10, 1), 8: _grid((10, 20, 30), 10, 1)}
_EX44 = {
    1: _grid((60, 90, 110), 10, 6),
    2: _grid((40, 60, 80), 10, 6),
    4: _grid((25, 40, 50), 10, 6),
    8: _grid((15, 25, 35), 10, 6),
}
_EX45 = {
    1: _grid((80,), 20, 1, 1) + _grid((80,), 20, 1) + _grid((80,), 20, 2),
    4: _grid((50,), 20, 4) + _grid((50,), 20, 5),
}
_EX46 = {1: _grid((20,), 20, 1) + _grid((20,), 20, 2), 4: _grid((10,), 10, 4) + _grid((10,), 10, 5)}

# id -> (matrix recipe, {s: bound grid}, default s)
_REGISTRY = {
    "ex4.1": (dict(matrix="spectrum", values=tuple(example41_spectrum())), {1: _EX41}, 1,
              "outliers 0.1..0.4 below 5..100"),
    "ex4.2": (dict(matrix="spectrum", values=tuple(example41_spectrum())), {1: _EX42}, 1,
              "same matrix, four lowest eigenpairs deflated"),
    "ex4.3": (dict(matrix="spectrum", values=tuple(example43_spectrum())), _EX43, 1,
              "one isolated eigenvalue near zero, block sizes 1, 4, 8"),
    "ex4.4": (dict(matrix="spectrum", values=tuple(_clustered_values())), _EX44, 1,
              "six clustered small eigenvalues, block sizes 1, 2, 4, 8"),
    "ex4.5": (dict(matrix="spectrum", values=tuple(_multiplicity_values())), _EX45, 1,
              "eigenvalue 0.0005 of multiplicity five, block sizes 1 and 4"),
    "ex4.6": (dict(matrix="poisson", grid=20, precondition=True), _EX46, 1,
              "IC(0) preconditioned 2D Poisson, g = 20"),
}

SCENARIOS = tuple(_REGISTRY)


def env_seed():
    """Seed from ``BLOCKCG_SEED`` if set, else :data:`DEFAULT_SEED`."""
    raw = os.environ.get("BLOCKCG_SEED")
    return DEFAULT_SEED if raw in (None, "") else int(raw)


def get_scenario(sid, s=None, seed=None):
    """Registry lookup.

    Block sizes outside the registry grid are allowed; they reuse the bound
    grid of the nearest registered block size.
    """
    if sid not in _REGISTRY:
        raise KeyError(f"unknown scenario {sid!r}; choose from {', '.join(SCENARIOS)}")
    recipe, grids, s_default, note = _REGISTRY[sid]
    s = s_default if s is None else int(s)
    if s < 1:
        raise ValueError("block size must be positive")
    nearest = min(grids, key=lambda k: (abs(k - s), k))
    seed = env_seed() if seed is None else seed
    return Scenario(id=sid, s=s, bounds=grids[nearest], seed=seed, note=note, **recipe)


def registry_grid(sid):
    """Block sizes listed for ``sid`` and their bound grids."""
    return dict(_REGISTRY[sid][1])


def build_operator(sc):
    if sc.matrix == "spectrum":
        return spectrum_matrix(sc.values)
    if sc.matrix == "poisson":
        return poisson_ic0_operator(sc.grid, sc.precondition)
    raise ValueError(f"unknown matrix recipe {sc.matrix!r}")


def initial_guess(n, s, seed):
    """Zero for a single right-hand side, i.i.d. standard normal otherwise."""
    if s == 1:
        return np.zeros((n, 1))
    return np.random.default_rng(seed).standard_normal((n, s))


# ---------------------------------------------------------------- running

@dataclass
class RunArtifact:
    """Output of :func:`run_scenario`.

    ``residual_rows`` holds ``(m, ||R_m||, theta_min, theta_max)``; the Ritz
    extremes are NaN at ``m = 0``. ``bounds`` maps each completed request to
    its :class:`~blockcg.bounds.BoundSeries`; ``errors`` lists the requests
    that failed.
    """

    scenario: Scenario
    trace: object
    residual_rows: list
    bounds: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    onset: int = None
    provenance: dict = field(default_factory=dict)

    @property
    def ok(self):
        return not self.errors


def run_scenario(sc, operator=None, onset_window=3):
    """Solve, evaluate every bound request and package the results.

    A failing request is logged and recorded in ``errors``; the remaining
    requests still run.
    """
    A = build_operator(sc) if operator is None else operator
    n = A.dim
    B = np.ones((n, sc.s))
    X0 = initial_guess(n, sc.s, sc.seed)
    trace = block_cg_solve(A, B, X0, max_m=sc.max_m, tol=sc.tol, checkpoints=[r.m for r in sc.bounds])
    rows = [(0, float(trace.norms[0]), float("nan"), float("nan"))]
    for rec in trace.records[1:]:
        lo, hi = ritz_extremes(trace.lanczos, rec.m)
        rows.append((rec.m, float(rec.norm), lo, hi))
    art = RunArtifact(sc, trace, rows)
    for req in sc.bounds:
        try:
            cfg = bound_config(A, trace, req.m, req.j_max, req.k1, req.k2)
            art.bounds[req] = compute_bounds(A, trace, cfg)
        except (BlockCGError, ValueError) as exc:
            log.warning("%s: bound config %s failed: %s", sc.id, req, exc)
            art.errors.append({"m": req.m, "j_max": req.j_max, "k1": req.k1, "k2": req.k2,
                               "error": type(exc).__name__, "message": str(exc)})
    art.onset = superlinearity_onset(trace, onset_window)
    art.provenance = {
        "scenario": sc.id,
        "seed": sc.seed,
        "s": sc.s,
        "n": n,
        "tol": sc.tol,
        "version": __version__,
        "iterations": trace.iterations,
        "converged": trace.converged,
        "stop_reason": trace.reason,
    }
    return art


def local_ratios(norms):
    """``rho_m = ||R_m|| / ||R_{m-1}||`` for ``m = 1..len(norms)-1``."""
    norms = np.asarray(norms, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return norms[1:] / norms[:-1]


def superlinearity_onset(trace, window=3):
    """First iteration after which the local convergence rate keeps improving.

    Returns the iteration ``m`` ending the first run of ``window`` strictly
    decreasing ratios ``rho_{m-window+1} > ... > rho_m`` such that no later
    ratio climbs back above ``rho_m``; ``None`` if there is no such run.
    The persistence condition discards the short-lived dips that roundoff
    and the plateau phase produce before the rate genuinely improves.
    """
    norms = trace.norms if hasattr(trace, "norms") else trace
    rho = local_ratios(norms)
    rho = rho[np.isfinite(rho)]
    if window < 1:
        raise ValueError("window must be positive")
    # suffix maximum of the ratios after each position
    later_max = np.full(len(rho), -np.inf)
    for i in range(len(rho) - 2, -1, -1):
        later_max[i] = max(later_max[i + 1], rho[i + 1])
    run = 1
    for i in range(len(rho)):
        if i > 0 and rho[i] < rho[i - 1] * (1.0 - ONSET_RTOL):
            run += 1
        elif i > 0:
            run = 1
        if run >= window and later_max[i] <= rho[i] * (1.0 + ONSET_RTOL):
            return i + 1  # rho[i] belongs to iteration i+1
    return None


def iterations_to_tol(trace):
    """Iterations the run needed, or ``None`` if it stopped without converging."""
    return trace.iterations if trace.converged else None


def with_overrides(sc, **kw):
    """Copy of ``sc`` with the given fields replaced (``None`` values ignored)."""
    return replace(sc, **{k: v for k, v in kw.items() if v is not None})
