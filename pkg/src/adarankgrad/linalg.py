"""Dense real linear algebra used by the rest of the package.

Matrices are plain 2-D ``float64`` numpy arrays. Every public function checks
that its inputs and outputs are finite, so a NaN never travels silently from
one stage of the optimizer to the next.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    AsymmetricError,
    CheckpointFormatError,
    NonFiniteError,
    RankDeficientError,
    ShapeError,
    SizeOverflowError,
    SvdConvergenceError,
)

MAGIC = b"ARGD01"
_HEADER = struct.Struct("<6sQQ")
# Largest element count kron() will materialise (a 32768 x 32768 double matrix).
KRON_MAX_ELEMENTS = 2**30


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float64 array (no copy when already one)."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must have at least one row and column, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return arr


def _finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{what} produced a non-finite result")
    return arr


def gaussian_matrix(rows: int, cols: int, seed: int) -> np.ndarray:
    """I.i.d. standard-normal matrix from a PCG64 stream keyed by ``seed``.

    The same ``(rows, cols, seed)`` always yields the same bits on every
    platform numpy supports.
    """
    if rows < 1 or cols < 1:
        raise ShapeError(f"dimensions must be positive, got ({rows}, {cols})")
    rng = np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))
    return rng.standard_normal((rows, cols))


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 64-bit child seed for ``(seed, *keys)``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def fro_norm(a) -> float:
    return float(np.linalg.norm(as_matrix(a), "fro"))


def orthonormality_error(q) -> float:
    """||Q^T Q - I||_F."""
    q = as_matrix(q, "q")
    return float(np.linalg.norm(q.T @ q - np.eye(q.shape[1]), "fro"))


def qr_orthonormal(a, allow_deficient: bool = False, rel_tol: float = 1e-12) -> np.ndarray:
    """Thin Q factor of ``a`` by Householder reflections.

    The signs are fixed so that the implied R has a positive diagonal, which
    makes the factor unique for full-column-rank input.

    Args:
        a: n x k matrix with k <= n.
        allow_deficient: when False, a column whose remaining norm is at most
            ``rel_tol * ||a||_F`` raises ``RankDeficientError``. When True such
            columns are skipped and the returned basis has fewer than k columns.
        rel_tol: pivot threshold relative to the Frobenius norm of ``a``.

    Returns:
        n x k' matrix with orthonormal columns spanning the column space of ``a``.
    """
    a = as_matrix(a, "a")
    n, k = a.shape
    if k > n:
        raise ShapeError(f"thin QR needs k <= n, got {n}x{k}")
    tol = rel_tol * float(np.linalg.norm(a, "fro"))
    r = a.copy()
    reflectors = []
    signs = []
    row = 0
    for j in range(k):
        if row >= n:
            if not allow_deficient:
                raise RankDeficientError(j, 0.0, tol)
            continue
        x = r[row:, j]
        pivot = float(np.linalg.norm(x))
        if pivot <= tol:
            if not allow_deficient:
                raise RankDeficientError(j, pivot, tol)
            continue
        v = x.copy()
        sign = 1.0 if x[0] >= 0 else -1.0
        v[0] += sign * pivot
        v /= np.linalg.norm(v)
        r[row:, j:] -= 2.0 * np.outer(v, v @ r[row:, j:])
        reflectors.append((row, v))
        # after reflecting, R[row, j] = -sign * pivot
        signs.append(-sign)
        row += 1

    rank = len(reflectors)
    q = np.eye(n, rank)
    for (start, v) in reversed(reflectors):
        q[start:, :] -= 2.0 * np.outer(v, v @ q[start:, :])
    q *= np.asarray(signs)
    return _finite(q, "qr_orthonormal")


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``a = u @ diag(s) @ v.T`` with nonincreasing ``s``."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def reconstruct(self, rank: int | None = None) -> np.ndarray:
        k = len(self.s) if rank is None else rank
        return (self.u[:, :k] * self.s[:k]) @ self.v[:, :k].T


def _fix_signs(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # largest-magnitude entry of each left singular vector is made positive
    idx = np.argmax(np.abs(u), axis=0)
    flip = np.where(u[idx, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    return u * flip, v * flip


def _complete_basis(good: np.ndarray, n: int, k: int) -> np.ndarray:
    p = good.shape[1]
    if p == k:
        return good
    if p == 0:
        return np.eye(n, k)
    full, _ = np.linalg.qr(good, mode="complete")
    return np.hstack([good, full[:, p:k]])


def _jacobi_svd(a: np.ndarray, max_sweeps: int, tol: float) -> SvdResult:
    n, m = a.shape
    if n < m:
        t = _jacobi_svd(a.T, max_sweeps, tol)
        return SvdResult(t.v, t.s, t.u)
    work = a.copy()
    v = np.eye(m)
    energy = float(np.sum(a * a))
    off = 0.0
    for _ in range(max_sweeps):
        off = 0.0
        for i in range(m - 1):
            for j in range(i + 1, m):
                alpha = work[:, i] @ work[:, i]
                beta = work[:, j] @ work[:, j]
                gamma = work[:, i] @ work[:, j]
                off += gamma * gamma
                if gamma == 0.0 or abs(gamma) <= 1e-300:
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                wi = work[:, i].copy()
                work[:, i] = c * wi - s * work[:, j]
                work[:, j] = s * wi + c * work[:, j]
                vi = v[:, i].copy()
                v[:, i] = c * vi - s * v[:, j]
                v[:, j] = s * vi + c * v[:, j]
        if np.sqrt(off) <= tol * energy:
            break
    else:
        raise SvdConvergenceError(float(np.sqrt(off)), max_sweeps)

    s = np.linalg.norm(work, axis=0)
    order = np.argsort(-s, kind="stable")
    s, work, v = s[order], work[:, order], v[:, order]
    cutoff = max(n, m) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    good = int(np.sum(s > cutoff))
    u = _complete_basis(work[:, :good] / s[:good], n, m)
    s = np.where(np.arange(m) < good, s, 0.0)
    return SvdResult(u, s, v)


def svd(a, method: str = "lapack", max_sweeps: int = 100, tol: float = 1e-12) -> SvdResult:
    """Thin SVD with deterministic signs.

    ``method="lapack"`` uses the divide-and-conquer LAPACK driver through
    numpy. ``method="jacobi"`` runs one-sided Jacobi, stopping once the
    off-diagonal Gram energy drops to ``tol * ||a||_F^2``; it is slower and
    mostly useful as an independent cross-check.
    """
    a = as_matrix(a, "a")
    if method == "lapack":
        try:
            u, s, vt = np.linalg.svd(a, full_matrices=False)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK rarely fails on finite input
            raise SvdConvergenceError(float("nan"), 0) from exc
        v = vt.T
    elif method == "jacobi":
        res = _jacobi_svd(a, max_sweeps, tol)
        u, s, v = res.u, res.s, res.v
    else:
        raise ValueError(f"unknown SVD method {method!r}")
    u, v = _fix_signs(u, v)
    return SvdResult(_finite(u, "svd"), _finite(np.maximum(s, 0.0), "svd"), _finite(v, "svd"))


def singular_values(a) -> np.ndarray:
    return np.linalg.svd(as_matrix(a), compute_uv=False)


def spectral_norm(a) -> float:
    return float(singular_values(a)[0])


def kron(a, b) -> np.ndarray:
    """Kronecker product; entry ``[i*r + k, j*s + l] = a[i, j] * b[k, l]``."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    size = a.size * b.size
    if size > KRON_MAX_ELEMENTS:
        raise SizeOverflowError(f"kron output would have {size} elements (limit {KRON_MAX_ELEMENTS})")
    return _finite(np.kron(a, b), "kron")


def _check_symmetric(s: np.ndarray) -> None:
    if s.shape[0] != s.shape[1]:
        raise ShapeError(f"expected a square matrix, got {s.shape}")
    asym = float(np.linalg.norm(s - s.T, "fro"))
    if asym > 1e-10 * float(np.linalg.norm(s, "fro")):
        raise AsymmetricError(asym)


def sym_eigvals(s) -> np.ndarray:
    """Eigenvalues of a symmetric matrix in ascending order."""
    s = as_matrix(s, "s")
    _check_symmetric(s)
    return _finite(np.linalg.eigvalsh(s), "sym_eigvals")


def sym_eig(s) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and matching orthonormal eigenvectors (as columns)."""
    s = as_matrix(s, "s")
    _check_symmetric(s)
    w, vecs = np.linalg.eigh(s)
    return _finite(w, "sym_eig"), _finite(vecs, "sym_eig")


def random_orthogonal(n: int, seed: int) -> np.ndarray:
    return qr_orthonormal(gaussian_matrix(n, n, seed))


# -- checkpoint files -------------------------------------------------------


def encode_matrix(a) -> bytes:
    a = as_matrix(a)
    rows, cols = a.shape
    return _HEADER.pack(MAGIC, rows, cols) + a.astype("<f8").tobytes(order="C")


def decode_matrix(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise CheckpointFormatError(f"file too short for header ({len(blob)} bytes)")
    magic, rows, cols = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if rows < 1 or cols < 1:
        raise CheckpointFormatError(f"invalid dimensions {rows}x{cols}")
    expected = _HEADER.size + 8 * rows * cols
    if len(blob) < expected:
        raise CheckpointFormatError(f"truncated: expected {expected} bytes, found {len(blob)}")
    if len(blob) > expected:
        raise CheckpointFormatError(f"{len(blob) - expected} trailing bytes after matrix data")
    data = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size, count=rows * cols)
    arr = data.astype(np.float64).reshape(rows, cols)
    if not np.all(np.isfinite(arr)):
        raise CheckpointFormatError("matrix data contains NaN or Inf")
    return arr


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_matrix(path, a) -> None:
    """Write ``a`` in the ARGD01 format (atomic temp-file + rename)."""
    atomic_write_bytes(path, encode_matrix(a))


def read_matrix(path) -> np.ndarray:
    return decode_matrix(Path(path).read_bytes())
