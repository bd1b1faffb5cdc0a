"""Subspace selection for low-rank gradient projection.

The central quantity is the information ratio of a basis ``Q`` for a matrix
``A``: the fraction of squared Frobenius energy that ``Q Q^T A`` misses. The
randomized range finder produces a cheap basis, and the adaptive search picks
the narrowest prefix of that basis whose ratio stays under a threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import RankDeficientError, ShapeError, ZeroMatrixError

MODES = ("ssrf", "exact_svd")


@dataclass(frozen=True)
class SsrfResult:
    basis: np.ndarray
    deficient: bool  # fewer than the requested columns could be produced

    @property
    def rank(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class RankSearchResult:
    basis: np.ndarray
    rank: int
    error_ratio: float
    evaluations: int
    deficient: bool = False


def _nonzero(a, name: str = "a") -> np.ndarray:
    a = linalg.as_matrix(a, name)
    if not np.any(a):
        raise ZeroMatrixError(f"{name} is the zero matrix; the ratio is undefined")
    return a


def ssrf(a, r: int, seed: int, oversample: int = 0) -> SsrfResult:
    """Orthonormal basis for the range of ``a @ Omega`` with Gaussian ``Omega``.

    ``Omega`` has ``r + oversample`` columns. When the sketch is rank deficient
    the draw is repeated once with ``seed + 1``; if that also fails (``a`` has
    rank below ``r``) the achievable basis is returned with ``deficient=True``.
    """
    a = _nonzero(a)
    n, m = a.shape
    if r < 1 or r > min(n, m):
        raise ShapeError(f"rank {r} outside [1, {min(n, m)}]")
    if oversample < 0:
        raise ValueError("oversample must be nonnegative")
    width = min(r + oversample, n)
    for attempt in (seed, seed + 1):
        y = a @ linalg.gaussian_matrix(m, width, attempt)
        try:
            q = linalg.qr_orthonormal(y)
            return SsrfResult(q[:, :r] if oversample == 0 else _top_directions(a, q, r), False)
        except RankDeficientError:
            continue
    q = linalg.qr_orthonormal(y, allow_deficient=True)
    if q.shape[1] > r:
        q = _top_directions(a, q, r)
    return SsrfResult(q, True)


def _top_directions(a: np.ndarray, q: np.ndarray, r: int) -> np.ndarray:
    # Reduce an oversampled basis to its r dominant directions within span(q).
    small = linalg.svd(q.T @ a)
    return q @ small.u[:, :r]


def approx_error_ratio(a, q) -> float:
    """Squared-energy fraction of ``a`` outside ``span(q)``, in [0, 1]."""
    a = _nonzero(a)
    q = linalg.as_matrix(q, "q")
    if q.shape[0] != a.shape[0]:
        raise ShapeError(f"basis has {q.shape[0]} rows, matrix has {a.shape[0]}")
    if linalg.orthonormality_error(q) > 1e-8:
        raise ValueError("basis columns are not orthonormal")
    resid = a - q @ (q.T @ a)
    ratio = float(np.sum(resid * resid) / np.sum(a * a))
    return min(max(ratio, 0.0), 1.0)


def tail_energy(s, r: int) -> float:
    """sum_{i > r} s_i^2 for singular values ``s``."""
    s = np.asarray(s, dtype=float)
    return float(np.sum(s[r:] ** 2))


def truncated_svd(a, r: int) -> linalg.SvdResult:
    res = linalg.svd(a)
    if r < 0 or r > len(res.s):
        raise ShapeError(f"rank {r} outside [0, {len(res.s)}]")
    return linalg.SvdResult(res.u[:, :r], res.s[:r], res.v[:, :r])


def eckart_young_residual(a, r: int) -> float:
    """Frobenius error of the best rank-``r`` approximation of ``a``."""
    return math.sqrt(tail_energy(linalg.singular_values(a), r))


def minimal_rank_linear_scan(s, eta_th: float, r_min: int = 1, r_max: int | None = None) -> int:
    """Smallest r in [r_min, r_max] with tail energy <= eta_th * total (else r_max)."""
    s = np.asarray(s, dtype=float)
    total = float(np.sum(s**2))
    r_max = len(s) if r_max is None else r_max
    for r in range(r_min, r_max + 1):
        if tail_energy(s, r) <= eta_th * total:
            return r
    return r_max


def iass(
    a,
    r_min: int,
    r_max: int,
    eta_th: float,
    seed: int = 0,
    mode: str = "ssrf",
    linear_scan: bool = False,
) -> RankSearchResult:
    """Smallest prefix rank of a width-``r_max`` basis meeting the information threshold.

    The basis is computed once (randomized range finder, or exact left singular
    vectors in ``exact_svd`` mode) and prefixes ``Q[:, :r]`` are scored with
    ``approx_error_ratio``. A binary search over ``r`` costs at most
    ``ceil(log2(r_max - r_min + 1)) + 1`` evaluations; ``linear_scan=True``
    scans upward instead, which is exact even when randomized prefix ratios
    are not monotone.

    If no rank in range meets ``eta_th`` the result is ``r_max`` with its
    achieved ratio. If ``a`` has rank below ``r_max`` the bounds shrink to the
    achievable width and ``deficient`` is set.
    """
    a = _nonzero(a)
    n, m = a.shape
    if not 0.0 < eta_th < 1.0:
        raise ValueError(f"eta_th must lie in (0, 1), got {eta_th}")
    if not 1 <= r_min <= r_max <= min(n, m):
        raise ValueError(f"need 1 <= r_min <= r_max <= {min(n, m)}, got r_min={r_min}, r_max={r_max}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")

    deficient = False
    if mode == "ssrf":
        found = ssrf(a, r_max, seed)
        basis, deficient = found.basis, found.deficient
    else:
        basis = linalg.svd(a).u[:, :r_max]
    width = basis.shape[1]
    hi = min(r_max, width)
    lo = min(r_min, hi)

    ratios: dict[int, float] = {}

    def ratio(r: int) -> float:
        if r not in ratios:
            ratios[r] = approx_error_ratio(a, basis[:, :r])
        return ratios[r]

    if linear_scan:
        best = hi
        for r in range(lo, hi + 1):
            if ratio(r) <= eta_th:
                best = r
                break
    else:
        left, right = lo, hi
        while left < right:
            mid = (left + right) // 2
            if ratio(mid) <= eta_th:
                right = mid
            else:
                left = mid + 1
        best = left
    return RankSearchResult(basis[:, :best].copy(), best, ratio(best), len(ratios), deficient)


def max_evaluations(r_min: int, r_max: int) -> int:
    return math.ceil(math.log2(r_max - r_min + 1)) + 1


def kappa(g) -> float:
    """Energy fraction outside the best rank-one approximation: 1 - s_1^2 / sum s_i^2."""
    g = _nonzero(g, "g")
    s = linalg.singular_values(g)
    return min(max(tail_energy(s, 1) / float(np.sum(s**2)), 0.0), 1.0)


def stable_rank(g) -> float:
    """||g||_F / ||g||_2 (unsquared)."""
    g = _nonzero(g, "g")
    s = linalg.singular_values(g)
    return float(np.sqrt(np.sum(s**2)) / s[0])


def effective_rank(g, eta_th: float) -> int:
    """Smallest r >= 1 whose singular-value tail holds at most ``eta_th`` of the energy."""
    g = _nonzero(g, "g")
    if not 0.0 < eta_th < 1.0:
        raise ValueError(f"eta_th must lie in (0, 1), got {eta_th}")
    return minimal_rank_linear_scan(linalg.singular_values(g), eta_th)
