"""Supervised training of the restoration unit under a loop-time schedule.

Each patch is unrolled exactly ``schedule.loops(level)`` times and supervised
only at its terminal state (MSE against the clean patch); gradients flow back
through every step.
"""

from __future__ import annotations

import logging
import os
from typing import Sequence

import numpy as np

from .. import restorer as R
from .. import tensorcore as tc
from ..cli.checkpoint import Checkpoint, checkpoint_save, config_hash
from ..degradation import make_patches, metric_psnr
from .config import TrainConfig
from .schedule import Schedule

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    """A non-finite value stopped training; ``checkpoint`` holds the last good state."""

    def __init__(self, msg: str, checkpoint: Checkpoint):
        super().__init__(msg)
        self.checkpoint = checkpoint


def validation_set(corpus: Sequence[np.ndarray], levels, size: int, count: int, kind: str,
                   seed: int) -> dict[float, tuple[np.ndarray, np.ndarray]]:
    """Fixed (clean, degraded) patch stacks per level, shaped (count, 1, size, size)."""
    out = {}
    for i, lv in enumerate(levels):
        batch = next(make_patches(corpus, size, count, [lv], kind, seed=seed + 7919 * (i + 1), dtype=np.float64))
        out[float(lv)] = (batch.clean, batch.degraded)
    return out


def terminal_loss(params: tc.NetworkParams, clean: np.ndarray, degraded: np.ndarray, levels: np.ndarray,
                  schedule: Schedule, record_states: bool = False):
    """Mean per-patch MSE at each patch's scheduled terminal state (a recorded graph).

    Patches sharing a level are unrolled together. Returns ``(loss, states)``
    where ``states`` maps level to the list of unrolled batch states when
    ``record_states`` is set.
    """
    total, states = None, {}
    n = len(levels)
    dtype = params["head.weight"].dtype
    for lv in sorted(set(levels.tolist())):
        idx = np.flatnonzero(levels == lv)
        x0 = tc.Tensor(degraded[idx].astype(dtype))
        traj = R.unroll(x0, params, schedule.loops(lv))
        if record_states:
            states[lv] = traj
        part = tc.mul(tc.mse(traj[-1], clean[idx].astype(dtype)), len(idx) / n)
        total = part if total is None else tc.add(total, part)
    return total, states


def validate(params: tc.NetworkParams, val: dict, schedule: Schedule) -> dict[float, float]:
    """Mean PSNR of the clamped scheduled terminal state, per level."""
    out = {}
    dtype = params["head.weight"].dtype
    with tc.no_grad():
        for lv, (clean, deg) in val.items():
            x0 = tc.Tensor(deg.astype(dtype))
            final = R.unroll(x0, params, schedule.loops(lv))[-1].data
            out[lv] = float(np.mean([metric_psnr(np.clip(final[i, 0], 0, 1), clean[i, 0])
                                     for i in range(len(clean))]))
    return out


class PlateauScheduler:
    """Divide the learning rate by 10 when validation stops improving."""

    def __init__(self, lr: float, factor: float, patience: int, min_delta: float, floor: float):
        self.lr, self.factor, self.patience, self.min_delta, self.floor = lr, factor, patience, min_delta, floor
        self.best = -np.inf
        self.stale = 0

    def update(self, score: float) -> float:
        if score > self.best + self.min_delta:
            self.best = score
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr = max(self.floor, self.lr * self.factor)
                self.stale = 0
        return self.lr


def fmt(v: float) -> str:
    return f"{v:.6g}"


def train_restorer(corpus: Sequence[np.ndarray], schedule: Schedule, cfg: TrainConfig,
                   val_corpus: Sequence[np.ndarray] | None = None, log_csv: str | os.PathLike | None = None,
                   ckpt_path: str | os.PathLike | None = None, init: tc.NetworkParams | None = None) -> Checkpoint:
    params = init if init is not None else R.build_restoration_unit(R.RestorerArch(cfg.width_scale), cfg.seed)
    opt = tc.OptState("adam")
    plateau = PlateauScheduler(cfg.restorer_lr, cfg.plateau_factor, cfg.plateau_patience,
                               cfg.plateau_min_delta, cfg.lr_floor)
    val = validation_set(val_corpus if val_corpus is not None else corpus, schedule.levels, cfg.patch,
                         cfg.val_patches, cfg.kind, cfg.seed + 1)
    stream = make_patches(corpus, cfg.patch, cfg.batch, schedule.levels, cfg.kind, cfg.seed)
    meta = {"seed": cfg.seed, "schedule": schedule.to_dict(), "config_hash": config_hash(cfg.to_dict()),
            "kind": cfg.kind, "iteration": 0}

    csv = None
    if log_csv is not None:
        csv = open(log_csv, "w", newline="")
        csv.write(",".join(["iteration", "lr", "train_loss"] + [f"val_psnr_{lv:g}" for lv in val]) + "\n")

    def snapshot(it: int) -> Checkpoint:
        return Checkpoint(params, opt, {**meta, "iteration": it, "lr": plateau.lr})

    running = []
    try:
        for it in range(1, cfg.iterations + 1):
            batch = next(stream)
            loss, _ = terminal_loss(params, batch.clean, batch.degraded, batch.levels, schedule)
            if not np.isfinite(loss.data).all():
                ck = snapshot(it - 1)
                if ckpt_path is not None:
                    checkpoint_save(ck.params, ck.opt_state, ck.meta, ckpt_path)
                raise TrainingAborted(f"non-finite training loss at iteration {it}", ck)
            grads = tc.backward(loss, params)
            tc.optimizer_step(params, grads, opt, plateau.lr)
            running.append(float(loss.data))

            if it % cfg.eval_every == 0 or it == cfg.iterations:
                scores = validate(params, val, schedule)
                lr_used = plateau.lr
                plateau.update(float(np.mean(list(scores.values()))))
                if csv is not None:
                    row = [str(it), fmt(lr_used), fmt(float(np.mean(running)))] + [fmt(scores[lv]) for lv in val]
                    csv.write(",".join(row) + "\n")
                    csv.flush()
                log.info("iter %d lr %.1e loss %.5f val %s", it, lr_used, np.mean(running),
                         {k: round(v, 2) for k, v in scores.items()})
                running = []
    finally:
        if csv is not None:
            csv.close()

    ck = snapshot(cfg.iterations)
    if ckpt_path is not None:
        checkpoint_save(ck.params, ck.opt_state, ck.meta, ckpt_path)
    return ck
