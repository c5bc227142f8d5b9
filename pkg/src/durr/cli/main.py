"""``durr`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .. import policy as P
from .. import restorer as R
from ..degradation import (ImageFormatError, degrade, load_directory, metric_psnr, read_image, synthetic_corpus,
                           write_pgm)
from ..pipelines import Schedule, TrainConfig, TrainingAborted, train_policy_dqn, train_restorer
from ..tensorcore import NonFiniteError
from .checkpoint import CheckpointError, checkpoint_load
from .evaluate import StopRule, UnknownPolicyError, evaluate, export_trajectory

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DESK_WIDTH = 0.25
DESK_PATCH = 32
DESK_CORPUS = 64

log = logging.getLogger("durr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


# ---------------------------------------------------------------- shared helpers

def _task(args) -> tuple[str, list[float]]:
    """(degradation kind, levels) from --task/--sigma/--qf."""
    if args.task == "denoise":
        if args.qf:
            raise UsageError("--qf applies to --task deblock")
        return "gaussian", list(args.sigma or [])
    if args.sigma:
        raise UsageError("--sigma applies to --task denoise")
    return "jpeg", list(args.qf or [])


def _corpus(args) -> list[np.ndarray]:
    if args.corpus:
        imgs = load_directory(args.corpus)
        if not imgs:
            raise ImageFormatError(f"no images found in {args.corpus}")
        return imgs
    return synthetic_corpus(args.synthetic, args.image_size, args.corpus_seed)


def _val_corpus(args):
    if args.val_corpus:
        return load_directory(args.val_corpus)
    return synthetic_corpus(max(4, args.synthetic // 4), args.image_size, args.corpus_seed + 999)


def _add_task(p):
    p.add_argument("--task", choices=["denoise", "deblock"], default="denoise")
    p.add_argument("--sigma", type=float, nargs="+", help="noise level(s) on the 0-255 scale")
    p.add_argument("--qf", type=int, nargs="+", help="JPEG quality factor(s)")


def _add_corpus(p):
    p.add_argument("--corpus", help="directory of PGM/PNG images (default: synthetic corpus)")
    p.add_argument("--synthetic", type=int, default=DESK_CORPUS, help="synthetic corpus size")
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--corpus-seed", type=int, default=0)


# ---------------------------------------------------------------- commands

def cmd_gen_corpus(args):
    os.makedirs(args.out, exist_ok=True)
    for i, img in enumerate(synthetic_corpus(args.count, args.size, args.seed)):
        write_pgm(os.path.join(args.out, f"img_{i:04d}.pgm"), img)
    print(f"wrote {args.count} images to {args.out}")


def cmd_degrade(args):
    kind, levels = _task(args)
    if len(levels) != 1:
        raise UsageError("degrade takes exactly one --sigma or --qf value")
    img = read_image(args.input)
    write_pgm(args.out, degrade(img, kind, levels[0], seed=args.seed))


def _config(args, kind, levels) -> TrainConfig:
    return TrainConfig(batch=args.batch, patch=args.patch, kind=kind, seed=args.seed, width_scale=args.width_scale,
                       policy_width_scale=getattr(args, "policy_width_scale", 1.0),
                       iterations=getattr(args, "iterations", 2000), eval_every=args.eval_every,
                       val_patches=args.val_patches, levels=[float(v) for v in levels],
                       **({"policy_updates": args.updates, "max_steps": args.max_steps, "warmup": args.warmup,
                           "target_sync": args.target_sync, "policy_observation": args.observation}
                          if hasattr(args, "updates") else {}))


def cmd_train_restorer(args):
    kind, levels = _task(args)
    if args.schedule and args.naive:
        raise UsageError("pass either --schedule or --naive")
    if args.schedule:
        schedule = Schedule.parse(args.schedule)
    elif args.naive:
        if not levels:
            raise UsageError("--naive needs training levels via --sigma/--qf")
        schedule = Schedule.naive(args.naive, levels)
    else:
        raise UsageError("a --schedule or --naive loop count is required")
    cfg = _config(args, kind, schedule.levels)
    ck = train_restorer(_corpus(args), schedule, cfg, _val_corpus(args), args.log, args.out)
    print(f"saved restorer checkpoint to {args.out} after {ck.meta['iteration']} iterations")


def cmd_train_policy(args):
    kind, levels = _task(args)
    if not levels:
        raise UsageError("train-policy needs episode levels via --sigma/--qf")
    restorer = checkpoint_load(args.restorer, expect_unit="restorer")
    cfg = _config(args, kind, levels)
    ck = train_policy_dqn(_corpus(args), restorer, cfg, _val_corpus(args), args.log, args.out)
    print(f"saved policy checkpoint to {args.out} after {ck.meta['iteration']} updates")


def cmd_restore(args):
    restorer = checkpoint_load(args.restorer, expect_unit="restorer").params
    rule = StopRule.parse(args.policy)
    img = read_image(args.input)
    clean = read_image(args.clean) if args.clean else None
    if rule.name == "dqn":
        if not args.policy_ckpt:
            raise UsageError("--policy dqn needs --policy-ckpt")
        pol = checkpoint_load(args.policy_ckpt, expect_unit="policy").params
        out, traj, n = P.policy_decide(img, restorer, pol, args.max_steps, clean)
    else:
        steps = rule.steps if rule.name == "fixed" else args.max_steps
        if rule.name == "oracle" and clean is None:
            raise UsageError("--policy oracle needs --clean")
        traj = R.unfold_trajectory(img, restorer, steps, clean)
        n = {"fixed": lambda: steps, "decorr": lambda: P.decorrelation_stop_index(traj),
             "oracle": lambda: P.oracle_peak_index(traj)}[rule.name]()
        out = np.clip(traj.states[n], 0, 1)
    write_pgm(args.out, out)
    msg = f"stopped at step {n}"
    if clean is not None:
        msg += f", PSNR {metric_psnr(out, clean):.2f} dB (input {metric_psnr(img, clean):.2f} dB)"
    print(msg)


def cmd_eval(args):
    kind, levels = _task(args)
    if not levels:
        raise UsageError("eval needs levels via --sigma/--qf")
    restorer = checkpoint_load(args.restorer, expect_unit="restorer").params
    pol = checkpoint_load(args.policy_ckpt, expect_unit="policy").params if args.policy_ckpt else None
    report = evaluate(_corpus(args), restorer, args.policies.split(","), levels, kind, args.max_steps, args.seed, pol)
    text = report.csv_text()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.detail:
        with open(args.detail, "w") as fh:
            fh.write(report.detail_text())


def cmd_trajectory(args):
    restorer = checkpoint_load(args.restorer, expect_unit="restorer").params
    pol = checkpoint_load(args.policy_ckpt, expect_unit="policy").params if args.policy_ckpt else None
    clean = read_image(args.clean) if args.clean else None
    if args.input:
        img = read_image(args.input)
    elif clean is not None:
        kind, levels = _task(args)
        if len(levels) != 1:
            raise UsageError("degrading --clean needs exactly one --sigma or --qf")
        img = degrade(clean, kind, levels[0], seed=args.seed)
    else:
        raise UsageError("trajectory needs --input or --clean")
    export_trajectory(img, restorer, args.steps, args.out_csv, args.out_dir, clean, pol)


def cmd_inspect(args):
    ck = checkpoint_load(args.path)
    info = {"unit": ck.unit, "arch": ck.params.arch, "parameters": ck.params.count(),
            "tensors": {k: list(t.shape) for k, t in ck.params.items()},
            "optimizer": None if ck.opt_state is None else {"method": ck.opt_state.method,
                                                            "step": ck.opt_state.step},
            "meta": ck.meta}
    print(json.dumps(info, indent=2, sort_keys=True))


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="durr", description="Dynamically unfolding recurrent restorer.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-corpus", help="write a synthetic grayscale corpus as PGM files")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=DESK_CORPUS)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("degrade", help="add noise or JPEG blocking to one image")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_task(p)
    p.set_defaults(func=cmd_degrade)

    for name, func in (("train-restorer", cmd_train_restorer), ("train-policy", cmd_train_policy)):
        p = sub.add_parser(name)
        _add_task(p)
        _add_corpus(p)
        p.add_argument("--val-corpus")
        p.add_argument("--out", required=True, help="checkpoint path")
        p.add_argument("--log", help="training CSV path")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--batch", type=int, default=24)
        p.add_argument("--patch", type=int, default=DESK_PATCH)
        p.add_argument("--width-scale", type=float, default=DESK_WIDTH)
        p.add_argument("--eval-every", type=int, default=100)
        p.add_argument("--val-patches", type=int, default=48)
        p.set_defaults(func=func)
        if name == "train-restorer":
            p.add_argument("--schedule", help="refined schedule, e.g. 25:4,35:6,45:9,55:12")
            p.add_argument("--naive", type=int, help="fixed loop count for every level")
            p.add_argument("--iterations", type=int, default=2000)
        else:
            p.add_argument("--restorer", required=True)
            p.add_argument("--policy-width-scale", type=float, default=0.5)
            p.add_argument("--updates", type=int, default=3000)
            p.add_argument("--warmup", type=int, default=500)
            p.add_argument("--max-steps", type=int, default=20)
            p.add_argument("--target-sync", type=int, default=200)
            p.add_argument("--observation", action="store_true",
                           help="also feed the degraded input to the policy")

    p = sub.add_parser("restore", help="restore one image under a stop rule")
    p.add_argument("--restorer", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--policy", default="dqn", help="dqn | decorr | oracle | fixed:N")
    p.add_argument("--policy-ckpt")
    p.add_argument("--clean", help="ground truth, for PSNR and the oracle rule")
    p.add_argument("--max-steps", type=int, default=20)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("eval", help="mean PSNR/SSIM/stop step per level and stop rule")
    _add_task(p)
    _add_corpus(p)
    p.add_argument("--restorer", required=True)
    p.add_argument("--policy-ckpt")
    p.add_argument("--policies", default="oracle", help="comma list of dqn, decorr, oracle, fixed:N")
    p.add_argument("--max-steps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="summary CSV (default stdout)")
    p.add_argument("--detail", help="per-image CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trajectory", help="export per-step PSNR/SSIM/Q and images")
    _add_task(p)
    p.add_argument("--restorer", required=True)
    p.add_argument("--policy-ckpt")
    p.add_argument("--input", help="degraded image")
    p.add_argument("--clean", help="ground truth (degraded with --sigma/--qf when --input is absent)")
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("inspect-ckpt", help="print a checkpoint summary as JSON")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # argparse exits on --help and on usage errors
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except (UsageError, UnknownPolicyError) as e:
        print(f"durr: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteError, TrainingAborted, FloatingPointError) as e:
        print(f"durr: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointError, ImageFormatError, OSError, ValueError) as e:
        print(f"durr: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
