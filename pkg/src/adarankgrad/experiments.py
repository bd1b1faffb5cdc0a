"""Training loop that records per-step, per-layer optimizer diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import lowrank, network, optimizer
from .errors import DivergenceError

TRACE_COLUMNS = ("step", "layer_id", "rank", "eta_ratio", "grad_fnorm", "proj_grad_fnorm", "refresh_flag", "loss")
LOSS_LIMIT = 1e12


@dataclass
class TrainResult:
    weights: list[np.ndarray]
    losses: list[float]
    rows: list[tuple] = field(default_factory=list)
    ranks: list[list[int]] = field(default_factory=list)  # [step][layer] optimizer rank
    effective_ranks: list[list[int]] = field(default_factory=list)  # [step][layer], if tracked
    converged_at: int | None = None

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    def rank_series(self, layer: int) -> list[int]:
        return [r[layer] for r in self.ranks]


def make_optimizer(kind: str, shapes, hp: optimizer.Hyperparams | None = None, galore_rank: int | None = None,
                   galore_interval: int | None = 200):
    """Build one of ``adarankgrad``, ``galore``, ``adam`` or ``sgd``."""
    hp = hp or optimizer.Hyperparams()
    if kind == "adarankgrad":
        return optimizer.AdaRankGrad(hp, shapes)
    if kind == "galore":
        rank = galore_rank if galore_rank is not None else hp.r_max
        ghp = optimizer.galore_hyperparams(
            rank, galore_interval, alpha=hp.alpha, beta1=hp.beta1, beta2=hp.beta2,
            epsilon=hp.epsilon, varsigma1=hp.varsigma1, seed=hp.seed, weight_decay=hp.weight_decay,
        )
        opt = optimizer.AdaRankGrad(ghp, shapes)
        opt.name = "galore"
        return opt
    if kind == "adam":
        return optimizer.Adam(hp.alpha, hp.beta1, hp.beta2, hp.epsilon, hp.weight_decay, shapes=shapes)
    if kind == "sgd":
        return optimizer.SGD(hp.alpha, hp.weight_decay, shapes=shapes)
    raise ValueError(f"unknown optimizer {kind!r}")


def train(
    spec: network.NetworkSpec,
    batch: network.Batch,
    opt,
    steps: int,
    weights=None,
    track_effective_rank: float | None = None,
    stop_when_converged: bool = True,
) -> TrainResult:
    """Full-batch training for ``steps`` steps.

    ``track_effective_rank=eta`` also records ``effective_rank(G_j, eta)`` of
    every raw layer gradient (costs one SVD per layer per step).
    """
    w = [np.array(x, dtype=float) for x in (weights if weights is not None else network.init_weights(spec))]
    res = TrainResult(weights=w, losses=[])
    for t in range(steps):
        loss, grads = network.loss_and_grads(spec, w, batch)
        if not math.isfinite(loss) or loss > LOSS_LIMIT:
            raise DivergenceError(t, float(loss), "loss")
        if track_effective_rank is not None:
            res.effective_ranks.append([
                lowrank.effective_rank(g, track_effective_rank) if np.any(g) else 1 for g in grads
            ])
        w = opt.step(w, grads)
        res.losses.append(loss)
        recs = opt.records()
        res.ranks.append([r.rank for r in recs])
        for j, r in enumerate(recs):
            res.rows.append((t, j, r.rank, r.eta_ratio, r.grad_fnorm, r.proj_grad_fnorm, int(r.refreshed), loss))
        if stop_when_converged and getattr(opt, "converged", False):
            res.converged_at = t
            break
    res.weights = w
    res.losses.append(network.forward(spec, w, batch)[0])
    return res


def rank_decay_task(seed: int, n_samples: int = 256, target_rank: int = 4):
    """32-32-32-8 ReLU regression onto a rank-``target_rank`` linear map."""
    spec = network.NetworkSpec((32, 32, 32, 8), activation="relu", loss="mse", seed=seed)
    batch, _ = network.make_synthetic("lowrank_regression", (32, 8), n_samples, seed, rank=target_rank)
    return spec, batch
