"""Linear gradient dynamics of reversible networks.

For a reversible network the gradient of one layer has the form
``G = (1/N) sum_i (A_i - B_i W C_i)`` with PSD ``B_i`` and ``C_i``. Under the
update ``W <- W + alpha * G`` the gradient evolves linearly,
``vec(G_{t+1}) = (I - alpha S) vec(G_t)`` with ``S = (1/N) sum_i C_i kron B_i``
and column-stacking ``vec``. The component of ``G`` in the eigenspace of the
smallest eigenvalue of ``S`` shrinks slowest, so the energy outside the best
rank-one approximation (``kappa``) decays geometrically.

This module simulates that recursion exactly and compares the measured decay
of ``kappa`` with the rate predicted from the spectrum of ``S``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import linalg, lowrank
from .errors import DivergenceError, ShapeError, TraceTooShortError, VacuousBoundError

HALT_FNORM = 1e-14
DIVERGE_FNORM = 1e12
KAPPA_FLOOR = 1e-13
TAIL_FRACTION = 0.6
MIN_TAIL_STEPS = 50
TRACE_COLUMNS = ("step", "grad_fnorm", "kappa", "stable_rank")


def vec(a: np.ndarray) -> np.ndarray:
    """Column-stacking vectorisation."""
    return np.asarray(a).reshape(-1, order="F")


def unvec(x: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return np.asarray(x).reshape((rows, cols), order="F")


def _check_psd(mat: np.ndarray, name: str) -> None:
    linalg.sym_eigvals(mat)  # raises on asymmetry
    if float(np.min(np.linalg.eigvalsh(mat))) < -1e-10:
        raise ValueError(f"{name} is not positive semidefinite")


@dataclass(frozen=True)
class DynamicsSystem:
    a_list: tuple[np.ndarray, ...]
    b_list: tuple[np.ndarray, ...]
    c_list: tuple[np.ndarray, ...]
    w0: np.ndarray
    alpha: float

    def __post_init__(self):
        a_list = tuple(linalg.as_matrix(a, "A_i") for a in self.a_list)
        b_list = tuple(linalg.as_matrix(b, "B_i") for b in self.b_list)
        c_list = tuple(linalg.as_matrix(c, "C_i") for c in self.c_list)
        if not (len(a_list) == len(b_list) == len(c_list) >= 1):
            raise ShapeError("A, B and C lists must share a length N >= 1")
        w0 = linalg.as_matrix(self.w0, "w0")
        n, m = w0.shape
        for i, (a, b, c) in enumerate(zip(a_list, b_list, c_list)):
            if a.shape != (n, m) or b.shape != (n, n) or c.shape != (m, m):
                raise ShapeError(f"term {i}: shapes {a.shape}, {b.shape}, {c.shape} do not fit W {w0.shape}")
            _check_psd(b, f"B_{i}")
            _check_psd(c, f"C_{i}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        object.__setattr__(self, "a_list", a_list)
        object.__setattr__(self, "b_list", b_list)
        object.__setattr__(self, "c_list", c_list)
        object.__setattr__(self, "w0", w0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.w0.shape

    @property
    def n_terms(self) -> int:
        return len(self.a_list)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        total = sum(a - b @ w @ c for a, b, c in zip(self.a_list, self.b_list, self.c_list))
        return total / self.n_terms

    def operator(self) -> np.ndarray:
        """``S = (1/N) sum_i C_i kron B_i`` (symmetrised against round-off)."""
        s = sum(linalg.kron(c, b) for b, c in zip(self.b_list, self.c_list)) / self.n_terms
        return 0.5 * (s + s.T)


@dataclass(frozen=True)
class TraceStep:
    step: int
    w: np.ndarray
    g: np.ndarray
    grad_fnorm: float
    kappa: float  # nan once the gradient has vanished
    stable_rank: float


@dataclass(frozen=True)
class DynamicsTrace:
    steps: list[TraceStep]
    halted: bool  # stopped early because the gradient vanished

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def kappa(self) -> np.ndarray:
        return np.array([s.kappa for s in self.steps])

    @property
    def grad_fnorms(self) -> np.ndarray:
        return np.array([s.grad_fnorm for s in self.steps])

    def csv_rows(self) -> list[tuple]:
        return [(s.step, s.grad_fnorm, s.kappa, s.stable_rank) for s in self.steps]


def simulate(sys: DynamicsSystem, steps: int) -> DynamicsTrace:
    """Iterate ``W_{t+1} = W_t + alpha G_t`` for ``steps`` steps.

    Records ``(W_t, G_t, kappa, stable rank)`` for ``t = 0 .. steps-1``. Stops
    after recording a step whose gradient norm is below ``HALT_FNORM``.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    w = sys.w0.copy()
    out: list[TraceStep] = []
    for t in range(steps):
        g = sys.gradient(w)
        gnorm = float(np.linalg.norm(g, "fro"))
        if not math.isfinite(gnorm) or gnorm > DIVERGE_FNORM:
            raise DivergenceError(t, gnorm)
        if gnorm < HALT_FNORM:
            out.append(TraceStep(t, w.copy(), g, gnorm, math.nan, math.nan))
            return DynamicsTrace(out, True)
        s = linalg.singular_values(g)
        energy = float(np.sum(s**2))
        kappa = min(max(lowrank.tail_energy(s, 1) / energy, 0.0), 1.0)
        out.append(TraceStep(t, w.copy(), g, gnorm, kappa, math.sqrt(energy) / float(s[0])))
        w = w + sys.alpha * g
    return DynamicsTrace(out, False)


@dataclass(frozen=True)
class SpectrumInfo:
    lambda1: float
    lambda2: float
    lambda_max: float
    basis1: np.ndarray  # eigenvectors of S for lambda1, as columns


def spectrum(sys: DynamicsSystem) -> SpectrumInfo:
    """Two smallest distinct eigenvalues of ``S`` (gap above ``1e-8 ||S||_2``)."""
    evals, evecs = linalg.sym_eig(sys.operator())
    norm = float(np.max(np.abs(evals)))
    gap = 1e-8 * norm
    lam1 = float(evals[0])
    above = np.nonzero(evals > lam1 + gap)[0]
    if above.size == 0:
        raise VacuousBoundError(
            f"S has a single eigenvalue {lam1:.6g} within tolerance {gap:.3g}; the decay bound is vacuous"
        )
    lam2 = float(evals[above[0]])
    return SpectrumInfo(lam1, lam2, float(evals[-1]), evecs[:, : above[0]])


@dataclass
class DecayReport:
    lambda1: float
    lambda2: float
    lambda_max: float
    alpha: float
    predicted_ratio: float
    predicted_slope: float
    measured_slope: float
    slope_relative_error: float
    r_squared: float
    tail_start: int
    tail_steps: int
    c2: float
    bound_holds: bool
    bound_max_ratio: float
    monotone_alpha_limit: float
    grad_norm_monotone: bool
    halted: bool
    kappa_series: list = field(default_factory=list)
    sr_series: list = field(default_factory=list)

    def to_json(self) -> str:
        data = asdict(self)
        for key in ("kappa_series", "sr_series"):
            data[key] = [None if not math.isfinite(x) else x for x in data[key]]
        return json.dumps(data, indent=2, sort_keys=True) + "\n"


def tail_window(kappa: np.ndarray) -> np.ndarray:
    """Indices of the last 60% of the steps whose kappa exceeds ``KAPPA_FLOOR``."""
    valid = np.nonzero(np.nan_to_num(kappa, nan=0.0) > KAPPA_FLOOR)[0]
    return valid[int((1.0 - TAIL_FRACTION) * len(valid)):]


def bound_constant(sys: DynamicsSystem, g0: np.ndarray, info: SpectrumInfo) -> float:
    """``c2 = ||g0_perp||^2 / ||G0_par||_2^2`` for the split of ``vec(G0)`` along the lambda1 eigenspace."""
    n, m = sys.shape
    v0 = vec(g0)
    par = info.basis1 @ (info.basis1.T @ v0)
    perp = v0 - par
    par_norm = linalg.spectral_norm(unvec(par, n, m)) if np.any(par) else 0.0
    if par_norm == 0.0:
        return math.inf
    return float(perp @ perp) / par_norm**2


def analyze(sys: DynamicsSystem, trace: DynamicsTrace) -> DecayReport:
    """Compare the measured decay of kappa with the rate implied by ``S``."""
    info = spectrum(sys)
    a = sys.alpha
    ratio = (1.0 - a * info.lambda2) / (1.0 - a * info.lambda1)
    predicted = 2.0 * math.log(abs(ratio)) if ratio != 0 else -math.inf

    kappa = trace.kappa
    tail = tail_window(kappa)
    if len(tail) < MIN_TAIL_STEPS:
        raise TraceTooShortError(
            f"only {len(tail)} tail steps with kappa > {KAPPA_FLOOR:g}; need {MIN_TAIL_STEPS}"
        )
    t = np.array([trace.steps[i].step for i in tail], dtype=float)
    y = np.log(kappa[tail])
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0

    t0 = trace.steps[0].step
    c2 = bound_constant(sys, trace.steps[0].g, info)
    steps = np.array([s.step for s in trace.steps], dtype=float)
    valid = np.nan_to_num(kappa, nan=0.0) > KAPPA_FLOOR
    bound = ratio ** (2.0 * (steps[valid] - t0)) * c2
    worst = float(np.max(kappa[valid] / bound)) if np.any(valid) else 0.0

    norms = trace.grad_fnorms
    monotone = bool(np.all(np.diff(norms) <= 1e-12 * norms[0]))
    return DecayReport(
        lambda1=info.lambda1,
        lambda2=info.lambda2,
        lambda_max=info.lambda_max,
        alpha=a,
        predicted_ratio=ratio,
        predicted_slope=predicted,
        measured_slope=float(slope),
        slope_relative_error=abs(float(slope) - predicted) / abs(predicted) if predicted else math.inf,
        r_squared=r2,
        tail_start=int(trace.steps[tail[0]].step),
        tail_steps=int(len(tail)),
        c2=c2,
        bound_holds=bool(worst <= 1.0 + 1e-9),
        bound_max_ratio=worst,
        monotone_alpha_limit=2.0 / info.lambda_max if info.lambda_max > 0 else math.inf,
        grad_norm_monotone=monotone,
        halted=trace.halted,
        kappa_series=[float(x) for x in kappa],
        sr_series=[float(s.stable_rank) for s in trace.steps],
    )


def _psd_from_spectrum(spec, size: int, q: np.ndarray) -> np.ndarray:
    lam = np.asarray(spec, dtype=float)
    if lam.size == 0:
        raise ValueError("spectrum must list at least one eigenvalue")
    if np.any(lam < 0):
        raise ValueError(f"requested eigenvalues must be nonnegative, got {lam.min()}")
    if lam.size > size:
        raise ShapeError(f"spectrum has {lam.size} values for a {size}x{size} matrix")
    lam = np.concatenate([lam, np.full(size - lam.size, lam[-1])])
    out = (q * lam) @ q.T
    return 0.5 * (out + out.T)


def make_system(
    n: int,
    m: int,
    n_terms: int,
    b_spectrum,
    c_spectrum=None,
    seed: int = 0,
    alpha: float = 0.01,
    shared_eigenbasis: bool = True,
    w0=None,
) -> DynamicsSystem:
    """Seeded system with ``B_i = Q_i diag(b) Q_i^T`` and ``C_i`` built likewise.

    A spectrum shorter than the matrix is padded with its last value, so
    ``(1, 2)`` for a 6x6 ``B`` means eigenvalues ``(1, 2, 2, 2, 2, 2)``.
    ``c_spectrum=None`` gives ``C_i = I``. With ``shared_eigenbasis`` every
    term uses the same ``Q`` (so all ``B_i`` coincide); otherwise each term
    draws its own. ``A_i`` are Gaussian and ``W_0`` defaults to zero.
    """
    if n < 1 or m < 1 or n_terms < 1:
        raise ShapeError(f"invalid system size n={n}, m={m}, N={n_terms}")
    b_list, c_list, a_list = [], [], []
    for i in range(n_terms):
        key = 0 if shared_eigenbasis else i
        qb = linalg.random_orthogonal(n, linalg.derive_seed(seed, 1, key))
        b_list.append(_psd_from_spectrum(b_spectrum, n, qb))
        if c_spectrum is None:
            c_list.append(np.eye(m))
        else:
            qc = linalg.random_orthogonal(m, linalg.derive_seed(seed, 2, key))
            c_list.append(_psd_from_spectrum(c_spectrum, m, qc))
        a_list.append(linalg.gaussian_matrix(n, m, linalg.derive_seed(seed, 3, i)))
    w0 = np.zeros((n, m)) if w0 is None else w0
    return DynamicsSystem(tuple(a_list), tuple(b_list), tuple(c_list), w0, alpha)


def standard_system(seed: int = 0, alpha: float = 0.01) -> DynamicsSystem:
    """The reference fixture: n = m = 6, N = 2, B spectrum {1, 2}, C = I."""
    return make_system(6, 6, 2, (1.0, 2.0), None, seed=seed, alpha=alpha)
