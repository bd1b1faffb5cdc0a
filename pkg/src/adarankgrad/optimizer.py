"""AdaRankGrad: Adam on adaptively sized, adaptively refreshed gradient projections.

Per weight matrix ``W`` (n x m) the optimizer keeps an orthonormal basis
``Q`` (n x r) and Adam moments of the projected gradient ``Q^T G`` (r x m).
A step proceeds as:

1. If ``||G||_F <= varsigma1`` the layer is converged and nothing changes.
2. If the current block has ended, select a new basis for ``G`` (rank chosen
   by the information threshold) and rotate the moments into it with
   ``R = Q_new^T Q_old``.
3. Project, run the Adam update in the small space, and map the step back
   through ``Q``.

A block ends when the projected gradient norm falls to
``sqrt(1 - eta_th) * ||G_ref||_F`` (``G_ref`` being the gradient the basis was
built from), after a fixed number of steps, or at ``max_inner_steps``.

The functional core (``step``, ``select_subspace``, ``transform_moments``,
``adam_step``) never mutates its inputs. ``AdaRankGrad``, ``Adam`` and ``SGD``
wrap it for a list of layer weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import linalg, lowrank
from .errors import ShapeError

INNER_EXITS = ("adaptive", "fixed_interval")
RANK_MODES = ("adaptive", "fixed")
UPDATE_RULES = ("adam", "sgd")
SECOND_MOMENT_RULES = ("linear", "squared")


@dataclass(frozen=True)
class Hyperparams:
    """Optimizer settings.

    ``r_init`` is the lower bound handed to the rank search and the rank used
    when ``rank_mode="fixed"``. ``refresh_interval=None`` together with
    ``inner_exit="fixed_interval"`` means the first basis is kept forever
    (subject to ``max_inner_steps``, which may also be None).
    """

    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    eta_th: float = 0.1
    r_init: int = 1
    r_max: int = 8
    varsigma1: float = 1e-8
    inner_exit: str = "adaptive"
    refresh_interval: int | None = None
    max_inner_steps: int | None = 500
    seed: int = 0
    subspace_mode: str = "ssrf"
    rank_mode: str = "adaptive"
    transform_moments: bool = True
    update_rule: str = "adam"
    weight_decay: float = 0.0
    reset_bias_correction: bool = False
    second_moment_rule: str = "linear"

    def __post_init__(self):
        if not 0.0 < self.eta_th < 1.0:
            raise ValueError(f"eta_th must lie in (0, 1), got {self.eta_th}")
        if not 1 <= self.r_init <= self.r_max:
            raise ValueError(f"need 1 <= r_init <= r_max, got {self.r_init}, {self.r_max}")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        for name in ("alpha", "epsilon", "varsigma1"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.inner_exit not in INNER_EXITS:
            raise ValueError(f"inner_exit must be one of {INNER_EXITS}")
        if self.rank_mode not in RANK_MODES:
            raise ValueError(f"rank_mode must be one of {RANK_MODES}")
        if self.update_rule not in UPDATE_RULES:
            raise ValueError(f"update_rule must be one of {UPDATE_RULES}")
        if self.second_moment_rule not in SECOND_MOMENT_RULES:
            raise ValueError(f"second_moment_rule must be one of {SECOND_MOMENT_RULES}")
        if self.subspace_mode not in lowrank.MODES:
            raise ValueError(f"subspace_mode must be one of {lowrank.MODES}")
        if self.refresh_interval is not None and self.refresh_interval < 1:
            raise ValueError("refresh_interval must be positive or None")
        if self.max_inner_steps is not None and self.max_inner_steps < 1:
            raise ValueError("max_inner_steps must be positive or None")


def galore_hyperparams(rank: int, refresh_interval: int | None = 200, **kwargs) -> Hyperparams:
    """Fixed rank, fixed refresh interval, moments carried over untransformed."""
    kwargs.setdefault("subspace_mode", "exact_svd")
    kwargs.setdefault("max_inner_steps", None)
    return Hyperparams(
        r_init=rank,
        r_max=kwargs.pop("r_max", rank),
        rank_mode="fixed",
        inner_exit="fixed_interval",
        refresh_interval=refresh_interval,
        transform_moments=False,
        **kwargs,
    )


@dataclass(frozen=True)
class ProjectionState:
    q: np.ndarray
    rank: int
    refreshed_at_step: int
    ref_grad_fnorm: float
    error_ratio: float


@dataclass(frozen=True)
class StepRecord:
    """Diagnostics of the most recent step, consumed by trace writers."""

    grad_fnorm: float
    proj_grad_fnorm: float
    eta_ratio: float
    refreshed: bool
    converged: bool


@dataclass(frozen=True)
class StepEvent:
    kind: str  # "refresh" or "converged"
    step: int
    old_rank: int | None = None
    new_rank: int | None = None
    grad_fnorm: float = 0.0


@dataclass(frozen=True)
class AdaRankGradState:
    shape: tuple[int, int]
    hp: Hyperparams
    t: int = 0
    projection: ProjectionState | None = None
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    steps_in_block: int = 0
    refreshes: int = 0
    block_lengths: tuple[int, ...] = ()
    last: StepRecord | None = None

    @property
    def rank(self) -> int:
        return 0 if self.projection is None else self.projection.rank


def init_state(hp: Hyperparams, shape: tuple[int, int]) -> AdaRankGradState:
    n, m = shape
    if n < 1 or m < 1:
        raise ShapeError(f"invalid weight shape {shape}")
    return AdaRankGradState(shape=(int(n), int(m)), hp=hp)


def select_subspace(state: AdaRankGradState, g) -> ProjectionState:
    """Choose a projection basis for gradient ``g`` (Block 1).

    A basis that spans all n rows is replaced by the identity: any orthonormal
    basis of R^n gives the same subspace, and the canonical one makes the
    full-rank optimizer coincide with plain Adam.
    """
    g = linalg.as_matrix(g, "g")
    hp = state.hp
    n, m = g.shape
    cap = min(hp.r_max, n, m)
    seed = linalg.derive_seed(hp.seed, state.t)
    if hp.rank_mode == "adaptive":
        found = lowrank.iass(g, min(hp.r_init, cap), cap, hp.eta_th, seed, hp.subspace_mode)
        q, rank, ratio = found.basis, found.rank, found.error_ratio
    else:
        rank = min(hp.r_init, n, m)
        if hp.subspace_mode == "exact_svd":
            q = linalg.svd(g).u[:, :rank].copy()
        else:
            q = lowrank.ssrf(g, rank, seed).basis
            rank = q.shape[1]
        ratio = lowrank.approx_error_ratio(g, q)
    if rank == n:
        q, ratio = np.eye(n), 0.0
    return ProjectionState(q, rank, state.t, linalg.fro_norm(g), ratio)


def transform_moments(state: AdaRankGradState, q_new) -> tuple[np.ndarray, np.ndarray]:
    """Re-express the moments in a new basis (Block 2).

    Returns zero moments when there is no previous basis. The second moment is
    clamped at zero because ``R V`` can have negative entries.
    """
    q_new = linalg.as_matrix(q_new, "q_new")
    n, cols = state.shape
    if q_new.shape[0] != n:
        raise ShapeError(f"new basis has {q_new.shape[0]} rows, weights have {n}")
    r_new = q_new.shape[1]
    if state.projection is None or state.m is None:
        return np.zeros((r_new, cols)), np.zeros((r_new, cols))
    q_old = state.projection.q
    if state.m.shape[0] != q_old.shape[1]:
        raise ShapeError("stored moments do not match the stored basis")
    rot = q_new.T @ q_old
    if state.hp.second_moment_rule == "squared":
        return rot @ state.m, (rot * rot) @ state.v
    return rot @ state.m, np.maximum(rot @ state.v, 0.0)


def adam_step(state: AdaRankGradState, g_hat, w) -> tuple[np.ndarray, AdaRankGradState]:
    """Projected Adam update (Block 4). ``state.t`` must already count this step."""
    hp = state.hp
    if state.t < 1:
        raise ValueError("bias correction needs t >= 1; increment the step counter first")
    if state.projection is None or state.m is None or state.v is None:
        raise ValueError("adam_step needs a selected subspace")
    g_hat = linalg.as_matrix(g_hat, "g_hat")
    w = linalg.as_matrix(w, "w")
    if g_hat.shape != state.m.shape:
        raise ShapeError(f"projected gradient shape {g_hat.shape} != moment shape {state.m.shape}")

    m = hp.beta1 * state.m + (1.0 - hp.beta1) * g_hat
    v = hp.beta2 * state.v + (1.0 - hp.beta2) * (g_hat * g_hat)
    t = state.t - state.projection.refreshed_at_step if hp.reset_bias_correction else state.t
    m_hat = m / (1.0 - hp.beta1**t)
    v_hat = v / (1.0 - hp.beta2**t)
    direction = state.projection.q @ (m_hat / (np.sqrt(v_hat) + hp.epsilon))
    if hp.weight_decay:
        direction = direction + hp.weight_decay * w
    w_next = w - hp.alpha * direction
    return linalg.as_matrix(w_next, "updated weights"), replace(state, m=m, v=v)


def _sgd_step(state: AdaRankGradState, g_hat: np.ndarray, w: np.ndarray) -> np.ndarray:
    hp = state.hp
    direction = state.projection.q @ g_hat
    if hp.weight_decay:
        direction = direction + hp.weight_decay * w
    return linalg.as_matrix(w - hp.alpha * direction, "updated weights")


def _block_finished(state: AdaRankGradState, proj_norm: float) -> bool:
    hp = state.hp
    if hp.max_inner_steps is not None and state.steps_in_block >= hp.max_inner_steps:
        return True
    if hp.inner_exit == "adaptive":
        varsigma2 = math.sqrt(1.0 - hp.eta_th) * state.projection.ref_grad_fnorm
        return proj_norm <= varsigma2
    return hp.refresh_interval is not None and state.steps_in_block >= hp.refresh_interval


def step(state: AdaRankGradState, g, w) -> tuple[np.ndarray, AdaRankGradState, list[StepEvent]]:
    """One optimizer step for a single weight matrix."""
    g = linalg.as_matrix(g, "g")
    w = linalg.as_matrix(w, "w")
    if g.shape != state.shape or w.shape != state.shape:
        raise ShapeError(f"expected {state.shape}, got gradient {g.shape} and weights {w.shape}")
    hp = state.hp
    gnorm = float(np.linalg.norm(g, "fro"))
    if gnorm <= hp.varsigma1:
        rec = StepRecord(gnorm, gnorm, 0.0, False, True)
        return w, replace(state, last=rec), [StepEvent("converged", state.t, grad_fnorm=gnorm)]

    events: list[StepEvent] = []
    refresh = state.projection is None
    if not refresh:
        g_hat = state.projection.q.T @ g
        refresh = _block_finished(state, float(np.linalg.norm(g_hat, "fro")))
    if refresh:
        old_rank = state.rank
        proj = select_subspace(state, g)
        same_shape = state.m is not None and state.m.shape[0] == proj.rank
        if hp.transform_moments or not same_shape:
            m, v = transform_moments(state, proj.q)
        else:
            m, v = state.m, state.v
        lengths = state.block_lengths + ((state.steps_in_block,) if state.projection else ())
        state = replace(
            state, projection=proj, m=m, v=v, steps_in_block=0,
            refreshes=state.refreshes + 1, block_lengths=lengths,
        )
        g_hat = proj.q.T @ g
        events.append(StepEvent("refresh", state.t, old_rank, proj.rank, gnorm))

    proj_norm = float(np.linalg.norm(g_hat, "fro"))
    state = replace(state, t=state.t + 1)
    if hp.update_rule == "adam":
        w_next, state = adam_step(state, g_hat, w)
    else:
        w_next = _sgd_step(state, g_hat, w)
    eta = max(0.0, 1.0 - (proj_norm / gnorm) ** 2)
    rec = StepRecord(gnorm, proj_norm, eta, refresh, False)
    return w_next, replace(state, steps_in_block=state.steps_in_block + 1, last=rec), events


def galore_step(state: AdaRankGradState, g, w) -> tuple[np.ndarray, AdaRankGradState]:
    """Fixed-rank, fixed-interval step without moment rotation (baseline)."""
    hp = state.hp
    if hp.rank_mode != "fixed" or hp.inner_exit != "fixed_interval" or hp.transform_moments:
        raise ValueError("galore_step needs hyperparameters from galore_hyperparams()")
    w_next, state, _ = step(state, g, w)
    return w_next, state


def adam_reference(w, g, m, v, t: int, alpha=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8, weight_decay=0.0):
    """Textbook (full-matrix) Adam/AdamW update; returns ``(w, m, v)``."""
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return w - alpha * (m_hat / (np.sqrt(v_hat) + epsilon) + weight_decay * w), m, v


# -- multi-layer wrappers -----------------------------------------------------


@dataclass
class LayerRecord:
    rank: int
    eta_ratio: float
    grad_fnorm: float
    proj_grad_fnorm: float
    refreshed: bool


class AdaRankGrad:
    """Independent AdaRankGrad states for a list of weight matrices."""

    name = "adarankgrad"

    def __init__(self, hp: Hyperparams, shapes):
        self.hp = hp
        self.states = [init_state(hp, s) for s in shapes]
        self.events: list[tuple[int, StepEvent]] = []

    def step(self, weights, grads) -> list[np.ndarray]:
        out = []
        for j, (w, g) in enumerate(zip(weights, grads)):
            w_next, self.states[j], ev = step(self.states[j], g, w)
            self.events.extend((j, e) for e in ev)
            out.append(w_next)
        return out

    def records(self) -> list[LayerRecord]:
        return [
            LayerRecord(s.rank, s.last.eta_ratio, s.last.grad_fnorm, s.last.proj_grad_fnorm, s.last.refreshed)
            for s in self.states
        ]

    @property
    def converged(self) -> bool:
        return all(s.last is not None and s.last.converged for s in self.states)


class Adam:
    """Full-matrix Adam baseline."""

    name = "adam"

    def __init__(self, alpha=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8, weight_decay=0.0, shapes=()):
        self.kw = dict(alpha=alpha, beta1=beta1, beta2=beta2, epsilon=epsilon, weight_decay=weight_decay)
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0
        self._last: list[LayerRecord] = []

    def step(self, weights, grads) -> list[np.ndarray]:
        self.t += 1
        out = []
        self._last = []
        for j, (w, g) in enumerate(zip(weights, grads)):
            w_next, self.m[j], self.v[j] = adam_reference(w, g, self.m[j], self.v[j], self.t, **self.kw)
            out.append(w_next)
            gn = float(np.linalg.norm(g))
            self._last.append(LayerRecord(min(w.shape), 0.0, gn, gn, False))
        return out

    def records(self) -> list[LayerRecord]:
        return list(self._last)


class SGD:
    name = "sgd"

    def __init__(self, alpha=1e-2, weight_decay=0.0, shapes=()):
        self.alpha = alpha
        self.weight_decay = weight_decay
        self._last: list[LayerRecord] = []

    def step(self, weights, grads) -> list[np.ndarray]:
        self._last = []
        out = []
        for w, g in zip(weights, grads):
            out.append(w - self.alpha * (g + self.weight_decay * w))
            gn = float(np.linalg.norm(g))
            self._last.append(LayerRecord(min(w.shape), 0.0, gn, gn, False))
        return out

    def records(self) -> list[LayerRecord]:
        return list(self._last)
