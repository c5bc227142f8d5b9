"""Evaluation harnesses: stop-controlled restoration over a corpus, peak statistics, trajectory export."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import policy as P
from .. import restorer as R
from ..degradation import degrade, metric_psnr, metric_ssim, write_pgm
from ..tensorcore import NetworkParams


def fmt(v: float) -> str:
    return f"{v:.6g}"


class UnknownPolicyError(ValueError):
    pass


@dataclass(frozen=True)
class StopRule:
    """Parsed policy spec: ``dqn``, ``decorr``, ``oracle`` or ``fixed:N``."""

    name: str
    steps: int | None = None

    @classmethod
    def parse(cls, spec: str) -> "StopRule":
        spec = spec.strip()
        if spec in ("dqn", "decorr", "oracle"):
            return cls(spec)
        kind, _, n = spec.partition(":")
        if kind == "fixed" and n.isdigit():
            return cls("fixed", int(n))
        raise UnknownPolicyError(f"unknown policy spec {spec!r} (expected dqn, decorr, oracle or fixed:N)")

    @property
    def label(self) -> str:
        return f"fixed:{self.steps}" if self.name == "fixed" else self.name


@dataclass
class EvalRow:
    level: float
    policy: str
    psnr: float
    ssim: float
    stop: float
    count: int


@dataclass
class EvalReport:
    rows: list[EvalRow]
    # per image: (level, policy, image index, psnr, ssim, stop step)
    detail: list[tuple] = field(default_factory=list)

    HEADER = ("level", "policy", "mean_psnr", "mean_ssim", "mean_stop", "count")
    DETAIL_HEADER = ("level", "policy", "image", "psnr", "ssim", "stop")

    def row(self, level: float, policy: str) -> EvalRow:
        for r in self.rows:
            if r.level == level and r.policy == policy:
                return r
        raise KeyError((level, policy))

    def csv_text(self) -> str:
        lines = [",".join(self.HEADER)]
        for r in self.rows:
            lines.append(",".join([fmt(r.level), r.policy, fmt(r.psnr), fmt(r.ssim), fmt(r.stop), str(r.count)]))
        return "\n".join(lines) + "\n"

    def detail_text(self) -> str:
        lines = [",".join(self.DETAIL_HEADER)]
        for lv, pol, i, p, s, n in self.detail:
            lines.append(",".join([fmt(lv), pol, str(i), repr(float(p)), repr(float(s)), str(n)]))
        return "\n".join(lines) + "\n"


def _image_seed(seed: int, level_index: int, image_index: int) -> int:
    return seed * 1_000_003 + level_index * 10_007 + image_index


def _dqn_stop(traj: R.Trajectory, policy: NetworkParams, max_steps: int) -> int:
    """First step whose Q(continue) is not positive, replaying the shared trajectory."""
    state = P.PolicyState.initial(policy)
    x0 = traj.states[0]
    for n in range(max_steps + 1):
        if n == max_steps:
            return n
        q, state = P.policy_q_step(traj.states[n], state, policy, x0)
        if q <= 0:
            return n
    return max_steps


def evaluate(corpus: Sequence[np.ndarray], restorer: NetworkParams, policies: Sequence[str], levels: Sequence[float],
             kind: str = "gaussian", max_steps: int = 20, seed: int = 0, policy: NetworkParams | None = None
             ) -> EvalReport:
    """Restore every image at every level under each stop rule.

    All rules share one degraded copy and one unrolled trajectory per image, so
    their means are taken over identical image sets.
    """
    if len(corpus) == 0:
        raise ValueError("empty evaluation corpus")
    rules = [StopRule.parse(p) for p in policies]
    if any(r.name == "dqn" for r in rules) and policy is None:
        raise ValueError("policy spec 'dqn' needs a policy checkpoint")
    horizon = max([max_steps] + [r.steps for r in rules if r.name == "fixed"])
    rows, detail = [], []
    for li, lv in enumerate(levels):
        per_rule = {r.label: [] for r in rules}
        for i, clean in enumerate(corpus):
            clean = np.asarray(clean, dtype=np.float64)
            noisy = degrade(clean, kind, lv, seed=_image_seed(seed, li, i))
            traj = R.unfold_trajectory(noisy, restorer, horizon, ground_truth=clean)
            for rule in rules:
                if rule.name == "fixed":
                    n = rule.steps
                elif rule.name == "oracle":
                    n = int(np.argmax(traj.psnr[:max_steps + 1]))
                elif rule.name == "decorr":
                    n = P.decorrelation_stop_index(R.Trajectory(traj.states[:max_steps + 1]))
                else:
                    n = _dqn_stop(traj, policy, max_steps)
                out = np.clip(traj.states[n], 0.0, 1.0)
                rec = (float(lv), rule.label, i, traj.psnr[n], metric_ssim(out, clean), n)
                per_rule[rule.label].append(rec)
                detail.append(rec)
        for label, recs in per_rule.items():
            arr = np.array([r[3:] for r in recs], dtype=np.float64)
            rows.append(EvalRow(float(lv), label, *arr.mean(axis=0).tolist(), len(recs)))
    return EvalReport(rows, detail)


def eval_peak_psnr(corpus, restorer: NetworkParams, levels, max_steps: int = 20, kind: str = "gaussian",
                   seed: int = 0) -> EvalReport:
    """Per level: mean peak PSNR along the trajectory and mean argmax step (the peak time)."""
    return evaluate(corpus, restorer, ["oracle"], levels, kind, max_steps, seed)


def eval_durr(corpus, restorer: NetworkParams, policy_spec: str, levels, policy: NetworkParams | None = None,
              max_steps: int = 20, kind: str = "gaussian", seed: int = 0) -> EvalReport:
    return evaluate(corpus, restorer, [policy_spec], levels, kind, max_steps, seed, policy)


def export_trajectory(image: np.ndarray, restorer: NetworkParams, n_steps: int, out_csv: str | os.PathLike,
                      out_images_dir: str | os.PathLike | None = None, ground_truth: np.ndarray | None = None,
                      policy: NetworkParams | None = None) -> R.Trajectory:
    """Write one CSV row and one PGM per state.

    Columns are ``step`` followed by ``psnr,ssim`` when ``ground_truth`` is given
    and ``q_continue`` when ``policy`` is given.
    """
    traj = R.unfold_trajectory(np.asarray(image, dtype=np.float64), restorer, n_steps, ground_truth=ground_truth)
    header = ["step"]
    if ground_truth is not None:
        header += ["psnr", "ssim"]
    if policy is not None:
        header.append("q_continue")
        state = P.PolicyState.initial(policy)
        qs = []
        for s in traj.states:
            q, state = P.policy_q_step(s, state, policy, traj.states[0])
            qs.append(q)
    if out_images_dir is not None:
        os.makedirs(out_images_dir, exist_ok=True)
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for n, s in enumerate(traj.states):
            row = [str(n)]
            if ground_truth is not None:
                row += [fmt(traj.psnr[n]), fmt(metric_ssim(np.clip(s, 0, 1), ground_truth))]
            if policy is not None:
                row.append(fmt(qs[n]))
            w.writerow(row)
            if out_images_dir is not None:
                write_pgm(os.path.join(out_images_dir, f"step_{n:03d}.pgm"), np.clip(s, 0, 1))
    return traj
