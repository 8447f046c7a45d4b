"""Block conjugate gradients with a-posteriori superlinear convergence bounds."""
__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .linalg import SpdOperator, ainvf_norm, ainvf_inner  # noqa: F401
from .krylov import block_cg_solve, comparison_process, SolveTrace  # noqa: F401
from .bounds import bound_config, compute_bounds, BoundSeries  # noqa: F401
