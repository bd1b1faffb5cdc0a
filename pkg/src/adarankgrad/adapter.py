"""Extract a low-rank adapter from the difference of two checkpoints.

``delta = W_ft - W_pre`` is factored as ``A @ B`` with ``A`` (n x r) and
``B`` (r x m) taken from the truncated SVD, which is the best rank-r fit in
Frobenius norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg, lowrank
from .errors import ShapeError


@dataclass(frozen=True)
class AdapterPair:
    a: np.ndarray
    b: np.ndarray
    r: int
    residual_fnorm: float


def delta(w_ft, w_pre) -> np.ndarray:
    w_ft = linalg.as_matrix(w_ft, "w_ft")
    w_pre = linalg.as_matrix(w_pre, "w_pre")
    if w_ft.shape != w_pre.shape:
        raise ShapeError(f"checkpoint shapes differ: {w_ft.shape} vs {w_pre.shape}")
    return w_ft - w_pre


def numerical_rank(d, rel_tol: float = 1e-6) -> int:
    """Count of singular values above ``rel_tol * s_1`` (0 for the zero matrix)."""
    if rel_tol < 0:
        raise ValueError("rel_tol must be nonnegative")
    s = linalg.singular_values(d)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def factorize(d, r: int) -> AdapterPair:
    """Balanced rank-``r`` factors ``A = U_r sqrt(S_r)``, ``B = sqrt(S_r) V_r^T``."""
    d = linalg.as_matrix(d, "delta")
    if not 1 <= r <= min(d.shape):
        raise ShapeError(f"rank {r} outside [1, {min(d.shape)}]")
    res = linalg.svd(d)
    root = np.sqrt(res.s[:r])
    a = res.u[:, :r] * root
    b = (res.v[:, :r] * root).T
    return AdapterPair(a, b, r, float(np.linalg.norm(d - a @ b, "fro")))


def eckart_young_tail(d, r: int) -> float:
    return lowrank.tail_energy(linalg.singular_values(d), r)


@dataclass(frozen=True)
class AdapterReport:
    rank: int
    residual_fnorm: float
    relative_residual: float
    delta_fnorm: float
    shape: tuple[int, int]
    adapter_elements: int
    full_elements: int

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "residual_fnorm": self.residual_fnorm,
            "relative_residual": self.relative_residual,
            "delta_fnorm": self.delta_fnorm,
            "sizes": {
                "shape": list(self.shape),
                "adapter_elements": self.adapter_elements,
                "full_elements": self.full_elements,
            },
        }


def extract(w_pre, w_ft, rel_tol: float = 1e-6) -> tuple[AdapterPair | None, AdapterReport]:
    """Difference, rank estimate and factorization; ``None`` pair when the delta is zero."""
    d = delta(w_ft, w_pre)
    n, m = d.shape
    rank = numerical_rank(d, rel_tol)
    dnorm = float(np.linalg.norm(d, "fro"))
    if rank == 0:
        return None, AdapterReport(0, 0.0, 0.0, dnorm, (n, m), 0, n * m)
    pair = factorize(d, rank)
    rel = pair.residual_fnorm / dnorm if dnorm > 0 else 0.0
    report = AdapterReport(rank, pair.residual_fnorm, rel, dnorm, (n, m), rank * (n + m), n * m)
    return pair, report
