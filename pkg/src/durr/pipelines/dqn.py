"""Deep Q-learning of the stopping policy against a frozen restoration unit.

An episode starts from a degraded patch. At every step the policy scores
"continue"; the reward for continuing is the scaled drop in MSE to the clean
patch, stopping ends the episode with reward 0. Only Q(continue) is learned:
Q(stop) is identically 0, so the Bellman target for continuing from s is
``r + gamma * max(Q_target(s'), 0)`` (just ``r`` when s' is the forced stop
at ``max_steps``).
"""

from __future__ import annotations

import logging
import os
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import policy as P
from .. import restorer as R
from .. import tensorcore as tc
from ..cli.checkpoint import Checkpoint, checkpoint_save, config_hash
from ..degradation import make_patches
from .config import TrainConfig
from .train_restorer import fmt

log = logging.getLogger(__name__)

CONTINUE, STOP = 1, 0


def reward(loss_prev: float, loss_next: float, action, lam: float) -> float:
    """``lam * (loss_prev - loss_next)`` for continuing, 0 for stopping."""
    if not lam > 0:
        raise ValueError(f"reward scale must be positive, got {lam}")
    if loss_prev < 0 or loss_next < 0:
        raise ValueError("losses must be non-negative")
    if action in (CONTINUE, "continue"):
        return lam * (loss_prev - loss_next)
    return 0.0


@dataclass
class Transition:
    state: np.ndarray          # policy input planes (C, H, W) at step n
    h: np.ndarray              # LSTM state fed in at step n
    c: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray | None
    next_h: np.ndarray | None  # LSTM state produced at step n
    next_c: np.ndarray | None
    terminal: bool


class ReplayBuffer:
    """FIFO of transitions with uniform sampling from a seeded generator."""

    def __init__(self, capacity: int, seed: int = 0):
        self.items: deque[Transition] = deque(maxlen=capacity)
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self.items)

    def push(self, tr: Transition) -> None:
        if tr.action == STOP and tr.reward != 0:
            raise ValueError("stop transitions carry zero reward")
        self.items.append(tr)

    def sample_indices(self, k: int) -> np.ndarray:
        if len(self.items) == 0:
            raise ValueError("replay buffer is empty")
        return self.rng.integers(0, len(self.items), k)

    def sample(self, k: int) -> list[Transition]:
        return [self.items[i] for i in self.sample_indices(k)]


def _mse_per_item(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.mean((x.astype(np.float64) - y) ** 2, axis=(1, 2, 3))


def _planes(x: np.ndarray, x0: np.ndarray, with_observation: bool) -> np.ndarray:
    return np.concatenate([x, x0], axis=1) if with_observation else x


class EpisodeRunner:
    """Batched rollouts of the frozen restorer under an epsilon-greedy stopping rule."""

    def __init__(self, restorer: tc.NetworkParams, policy: tc.NetworkParams, cfg: TrainConfig,
                 rng: np.random.Generator):
        self.restorer, self.policy, self.cfg, self.rng = restorer, policy, cfg, rng
        self.with_obs = bool(policy.arch.get("with_observation"))

    def run(self, clean: np.ndarray, degraded: np.ndarray, epsilon: float, sink=None) -> dict:
        """Play one episode per patch. Returns per-episode stop steps, returns and loss curves."""
        cfg = self.cfg
        dtype = self.restorer["head.weight"].dtype
        n_ep = len(clean)
        x0 = degraded.astype(dtype)
        x = x0
        hs = P.PolicyState.initial(self.policy, n_ep)
        h, c = hs.h, hs.c
        active = np.arange(n_ep)
        loss = _mse_per_item(x0, clean)
        stop_at = np.full(n_ep, cfg.max_steps)
        returns = np.zeros(n_ep)
        for n in range(cfg.max_steps + 1):
            with tc.no_grad():
                q, h_new, c_new = P.q_forward(tc.Tensor(_planes(x, x0[active], self.with_obs)),
                                              tc.Tensor(h), tc.Tensor(c), self.policy)
            q = q.data[:, 0]
            explore = self.rng.random(len(active)) < epsilon
            random_cont = self.rng.random(len(active)) < 0.5
            cont = np.where(explore, random_cont, q > 0)
            if n == cfg.max_steps:
                cont[:] = False
            planes = _planes(x, x0[active], self.with_obs)
            if cont.any():
                keep = np.flatnonzero(cont)
                ids = active[keep]
                with tc.no_grad():
                    x_next = R.unfold_step(tc.Tensor(x[keep]), tc.Tensor(x0[ids]), self.restorer).data
                loss_next = _mse_per_item(x_next, clean[ids])
                r = self.cfg.reward_scale * (loss[ids] - loss_next)
                returns[ids] += r
                next_planes = _planes(x_next, x0[ids], self.with_obs)
            if sink is not None:
                for j in range(len(active)):
                    if cont[j]:
                        k = np.searchsorted(keep, j)
                        sink(Transition(planes[j], h[j], c[j], CONTINUE, float(r[k]), next_planes[k],
                                        h_new.data[j], c_new.data[j], n + 1 == cfg.max_steps))
                    else:
                        sink(Transition(planes[j], h[j], c[j], STOP, 0.0, None, None, None, True))
            stop_at[active[~cont]] = n
            if not cont.any():
                break
            x = x_next
            h, c = h_new.data[keep], c_new.data[keep]
            loss[ids] = loss_next
            active = ids
        return {"stop": stop_at, "returns": returns}


def _stack(trs: list[Transition], attr: str) -> np.ndarray:
    return np.stack([getattr(t, attr) for t in trs])


def bellman_loss(batch: list[Transition], online: tc.NetworkParams, target: tc.NetworkParams,
                 gamma: float) -> tc.Tensor | None:
    """Squared TD error of Q(continue) over the continue transitions in ``batch``."""
    trs = [t for t in batch if t.action == CONTINUE]
    if not trs:
        return None
    r = np.array([t.reward for t in trs])
    term = np.array([t.terminal for t in trs])
    with tc.no_grad():
        q_next, _, _ = P.q_forward(tc.Tensor(_stack(trs, "next_state")), tc.Tensor(_stack(trs, "next_h")),
                                   tc.Tensor(_stack(trs, "next_c")), target)
    bootstrap = np.where(term, 0.0, np.maximum(q_next.data[:, 0].astype(np.float64), 0.0))
    y = (r + gamma * bootstrap).astype(q_next.dtype)[:, None]
    q, _, _ = P.q_forward(tc.Tensor(_stack(trs, "state")), tc.Tensor(_stack(trs, "h")),
                          tc.Tensor(_stack(trs, "c")), online)
    # scaled so the gradient is a per-sample mean over the whole minibatch
    return tc.mul(tc.mse(q, y), len(trs) / len(batch))


def oracle_return(curve: np.ndarray, lam: float) -> float:
    return lam * (curve[0] - np.min(curve))


def train_policy_dqn(corpus: Sequence[np.ndarray], restorer: tc.NetworkParams | Checkpoint, cfg: TrainConfig,
                     val_corpus: Sequence[np.ndarray] | None = None, log_csv: str | os.PathLike | None = None,
                     ckpt_path: str | os.PathLike | None = None, updates_per_round: int = 4) -> Checkpoint:
    restorer = restorer.params if isinstance(restorer, Checkpoint) else restorer
    online = P.build_policy_unit(P.PolicyArch(cfg.policy_width_scale, with_observation=cfg.policy_observation),
                                 cfg.seed + 17)
    target = online.copy()
    opt = tc.OptState("rmsprop")
    rng = np.random.default_rng(cfg.seed + 3)
    buffer = ReplayBuffer(cfg.replay_capacity, cfg.seed + 5)
    runner = EpisodeRunner(restorer, online, cfg, rng)
    stream = make_patches(corpus, cfg.patch, cfg.episodes_per_round, cfg.levels, cfg.kind, cfg.seed + 11)
    val_stream = make_patches(val_corpus if val_corpus is not None else corpus, cfg.patch, cfg.val_patches,
                              cfg.levels, cfg.kind, cfg.seed + 13, dtype=np.float64)
    val = next(val_stream)
    val_curves = _loss_curves(restorer, val.clean, val.degraded, cfg.max_steps)
    val_oracle = float(np.mean([oracle_return(cv, cfg.reward_scale) for cv in val_curves]))
    meta = {"seed": cfg.seed, "config_hash": config_hash(cfg.to_dict()), "kind": cfg.kind,
            "levels": list(cfg.levels), "max_steps": cfg.max_steps}

    csv = None
    if log_csv is not None:
        csv = open(log_csv, "w", newline="")
        csv.write("update,epsilon,td_loss,val_return,val_oracle_return,val_stop_error\n")

    updates, losses, next_eval = 0, [], cfg.eval_every
    # the returned policy is the snapshot with the best validation return
    best, best_return, best_update = online.copy(), -np.inf, 0
    try:
        while updates < cfg.policy_updates:
            batch = next(stream)
            runner.run(batch.clean, batch.degraded, cfg.epsilon(updates), sink=buffer.push)
            if len(buffer) < cfg.warmup:
                continue
            for _ in range(updates_per_round):
                loss = bellman_loss(buffer.sample(cfg.policy_batch), online, target, cfg.gamma)
                updates += 1
                if loss is not None:
                    tc.check_finite(loss, f"TD loss at update {updates}")
                    tc.optimizer_step(online, tc.backward(loss, online), opt, cfg.policy_lr)
                    losses.append(float(loss.data))
                if updates % cfg.target_sync == 0:
                    target = online.copy()
                if updates >= next_eval or updates >= cfg.policy_updates:
                    next_eval += cfg.eval_every
                    res = runner.run(val.clean, val.degraded, 0.0)
                    if float(np.mean(res["returns"])) > best_return:
                        best, best_return, best_update = online.copy(), float(np.mean(res["returns"])), updates
                    oracle_stop = np.array([int(np.argmin(cv)) for cv in val_curves])
                    row = [str(updates), fmt(cfg.epsilon(updates)), fmt(float(np.mean(losses)) if losses else 0.0),
                           fmt(float(np.mean(res["returns"]))), fmt(val_oracle),
                           fmt(float(np.mean(np.abs(res["stop"] - oracle_stop))))]
                    if csv is not None:
                        csv.write(",".join(row) + "\n")
                        csv.flush()
                    log.info("update %s eps %s td %s return %s / oracle %s stop err %s", *row)
                    losses = []
                if updates >= cfg.policy_updates:
                    break
    finally:
        if csv is not None:
            csv.close()

    ck = Checkpoint(best, opt, {**meta, "iteration": updates, "best_update": best_update})
    if ckpt_path is not None:
        checkpoint_save(ck.params, ck.opt_state, ck.meta, ckpt_path)
    return ck


def _loss_curves(restorer: tc.NetworkParams, clean: np.ndarray, degraded: np.ndarray, n_steps: int) -> list:
    dtype = restorer["head.weight"].dtype
    with tc.no_grad():
        states = R.unroll(tc.Tensor(degraded.astype(dtype)), restorer, n_steps)
    mat = np.stack([_mse_per_item(s.data, clean) for s in states], axis=1)
    return list(mat)
