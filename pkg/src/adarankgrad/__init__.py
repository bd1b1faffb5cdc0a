"""Adaptive low-rank gradient projection for memory-efficient training."""

from .errors import ArgdError
from .lowrank import approx_error_ratio, effective_rank, iass, kappa, ssrf, stable_rank
from .optimizer import Adam, AdaRankGrad, Hyperparams, SGD, galore_hyperparams

__all__ = [
    "ArgdError",
    "Adam",
    "AdaRankGrad",
    "Hyperparams",
    "SGD",
    "approx_error_ratio",
    "effective_rank",
    "galore_hyperparams",
    "iass",
    "kappa",
    "ssrf",
    "stable_rank",
]

__version__ = "0.1.0"
