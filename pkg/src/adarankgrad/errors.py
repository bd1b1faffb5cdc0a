"""Exception hierarchy shared by every module.

Each error carries the numbers a caller needs to react (a column index, a
residual, a step), so messages are never the only source of information.
"""

from __future__ import annotations


class ArgdError(Exception):
    """Base class for all package errors."""


class ShapeError(ArgdError, ValueError):
    """Operand dimensions are incompatible."""


class NonFiniteError(ArgdError, ValueError):
    """A matrix contains NaN or Inf."""


class ZeroMatrixError(ArgdError, ValueError):
    """A ratio was requested for a matrix with zero Frobenius norm."""


class RankDeficientError(ArgdError, ValueError):
    def __init__(self, column: int, pivot: float, tol: float):
        self.column = column
        self.pivot = pivot
        self.tol = tol
        super().__init__(
            f"column {column} is numerically dependent on the previous ones "
            f"(pivot {pivot:.3e} <= tol {tol:.3e})"
        )


class SvdConvergenceError(ArgdError, RuntimeError):
    def __init__(self, residual: float, sweeps: int):
        self.residual = residual
        self.sweeps = sweeps
        super().__init__(
            f"SVD did not converge after {sweeps} sweeps (off-diagonal residual {residual:.3e})"
        )


class AsymmetricError(ArgdError, ValueError):
    def __init__(self, asymmetry: float):
        self.asymmetry = asymmetry
        super().__init__(f"matrix is not symmetric: ||S - S^T||_F = {asymmetry:.3e}")


class SizeOverflowError(ArgdError, ValueError):
    """Requested output would exceed the supported element count."""


class StaleCacheError(ArgdError, ValueError):
    """A forward cache was used with weights other than the ones that produced it."""


class DivergenceError(ArgdError, RuntimeError):
    def __init__(self, step: int, grad_fnorm: float, quantity: str = "gradient norm"):
        self.step = step
        self.grad_fnorm = grad_fnorm
        super().__init__(
            f"{quantity} {grad_fnorm:.3e} exceeded the divergence limit at step {step}; "
            "try a smaller step size"
        )


class VacuousBoundError(ArgdError, ValueError):
    """The operator has no pair of distinct smallest eigenvalues, so the decay bound says nothing."""


class CheckpointFormatError(ArgdError, ValueError):
    """A matrix checkpoint file is malformed (bad magic, truncated, or trailing bytes)."""


class ConfigError(ArgdError, ValueError):
    """An experiment configuration is invalid."""


class TraceTooShortError(ArgdError, ValueError):
    """A trajectory has too few usable steps for the requested fit."""


class InvariantError(ArgdError, AssertionError):
    """An internal consistency check failed; this indicates a bug."""
