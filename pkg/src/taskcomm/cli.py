"""Command-line entry points: train, eval, selftest."""

from __future__ import annotations

import argparse
import sys

from .config import ExperimentConfig, parse_config
from .experiment import run_eval, run_train


def _load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return parse_config(path)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="taskcomm",
        description="Predator-prey grid world with a learned task-oriented uplink scheduler.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one seed and write metrics + checkpoints")
    p_train.add_argument("--config", help="config file (key = value); defaults apply when omitted")
    p_train.add_argument("--seed", type=int, default=None, help="seed (default: first of config seeds)")
    p_train.add_argument("--out", required=True, help="output directory (per-seed subdirectory is created)")
    p_train.add_argument("--quiet", action="store_true", help="suppress progress lines")

    p_eval = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    p_eval.add_argument("--config", help="config file; must match the checkpoint shapes")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--quiet", action="store_true")

    p_self = sub.add_parser("selftest", help="run the built-in invariant and oracle suite")
    p_self.add_argument("--fast", action="store_true", help="smaller sample sizes")

    args = parser.parse_args(argv)

    if args.command == "train":
        config = _load_config(args.config)
        seed = args.seed if args.seed is not None else config.seeds[0]
        out = run_train(config, seed, args.out, progress=not args.quiet)
        print(out / "metrics_train.csv")
        return 0

    if args.command == "eval":
        config = _load_config(args.config)
        csv_path = run_eval(config, args.checkpoint, args.out, progress=not args.quiet)
        print(csv_path)
        return 0

    if args.command == "selftest":
        from .selftest import run_selftest

        return run_selftest(fast=args.fast)

    return 2


if __name__ == "__main__":
    sys.exit(main())
