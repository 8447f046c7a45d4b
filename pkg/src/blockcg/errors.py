"""Exception hierarchy shared by every module of the package."""


class BlockCGError(Exception):
    """Base class for all errors raised by :mod:`blockcg`."""


class DimensionMismatch(BlockCGError, ValueError):
    pass


class NotPositiveDefinite(BlockCGError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"matrix is not positive definite (pivot {index} <= 0)")


class RankDeficient(BlockCGError):
    def __init__(self, column, pivot):
        self.column = column
        self.pivot = pivot
        super().__init__(f"rank deficient block: column {column} has pivot {pivot:.3e}")


class NoConvergence(BlockCGError):
    def __init__(self, where, message=None):
        self.where = where
        super().__init__(message or f"no convergence ({where})")


class Breakdown(BlockCGError):
    """The Lanczos block ``M_i`` lost rank; the Krylov space is (numerically) invariant."""

    def __init__(self, step, pivot):
        self.step = step
        self.pivot = pivot
        super().__init__(f"block Lanczos breakdown at step {step} (pivot {pivot:.3e})")


class TmNotPositiveDefinite(BlockCGError):
    def __init__(self, m):
        self.m = m
        super().__init__(f"projected matrix T_{m} is not positive definite")


class InsufficientRitz(BlockCGError):
    pass


class RankCollapse(BlockCGError):
    pass


class DegenerateDenominator(BlockCGError):
    pass


class NonPositive(BlockCGError, ValueError):
    def __init__(self, value, where=None):
        self.value = value
        self.where = where
        loc = f" (line {where})" if where is not None else ""
        super().__init__(f"eigenvalue must be positive, got {value!r}{loc}")


class PivotLoss(BlockCGError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"incomplete Cholesky pivot {index} is not positive")


class ParseError(BlockCGError, ValueError):
    def __init__(self, line, text):
        self.line = line
        super().__init__(f"cannot parse line {line}: {text!r}")
