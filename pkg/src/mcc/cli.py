"""Command line entry point.

    mcc run --algo mcc --data emotions --folds 10 --seed 7 --out runs/emo-mcc
    mcc compare runs/emo-mcc runs/emo-br

Precedence: built-in defaults < command-line flags < ``--config`` file. A
run's own ``config.json`` can be passed back with ``--config`` to reproduce it.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import MCCError, TrainingAborted
from .experiment import ALGORITHMS, ConfigError, ExperimentConfig, compare, run_experiment

# flag -> TrainConfig field
TRAIN_FLAGS = {"hidden": "hidden", "batch": "batch_size", "iters": "iterations",
               "cth": "cost_threshold", "ath": "confidence_threshold", "lam": "lam",
               "neighbors": "neighbors"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcc", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="cross-validate one algorithm")
    run.add_argument("--algo", choices=ALGORITHMS)
    run.add_argument("--data", help="data file, or a dataset name (emotions, scene)")
    run.add_argument("--schema", help="schema sidecar JSON (defaults to the file's sidecar)")
    run.add_argument("--format", choices=("csv", "arff"))
    run.add_argument("--folds", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--workers", type=int, help="folds trained in parallel")
    run.add_argument("--data-dir", dest="data_dir")
    run.add_argument("--hidden", type=int)
    run.add_argument("--batch", type=int)
    run.add_argument("--iters", type=int)
    run.add_argument("--cth", type=float, help="cost budget")
    run.add_argument("--ath", type=float, help="confidence threshold")
    run.add_argument("--lambda", dest="lam", type=float)
    run.add_argument("--neighbors", type=int)
    run.add_argument("--exclude-history-cost", action="store_true",
                     help="leave the label-history modality out of cost-average")
    run.add_argument("--config", help="JSON config; its values override the flags")
    run.add_argument("-v", "--verbose", action="store_true")

    cmp = sub.add_parser("compare", help="merge finished runs into one table")
    cmp.add_argument("runs", nargs="+")
    return parser


def config_from_args(args) -> ExperimentConfig:
    top = {k: getattr(args, k) for k in ("algo", "data", "schema", "format", "folds",
                                         "seed", "out", "workers", "data_dir")}
    merged = {k: v for k, v in top.items() if v is not None}
    if args.exclude_history_cost:
        merged["include_history_cost"] = False
    train = {field: getattr(args, flag) for flag, field in TRAIN_FLAGS.items()
             if getattr(args, flag) is not None}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        train.update(file_cfg.pop("train", {}) or {})
        file_cfg.pop("resolved", None)
        merged.update(file_cfg)
    if "data" not in merged:
        raise ConfigError("--data is required")
    merged["train"] = train
    return ExperimentConfig.from_dict(merged)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "compare":
        try:
            print(compare(args.runs), end="")
        except (FileNotFoundError, ValueError) as exc:
            print(f"mcc compare: {exc}", file=sys.stderr)
            return 2
        return 0

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        cfg = config_from_args(args)
        report, _ = run_experiment(cfg)
    except ConfigError as exc:
        print(f"mcc run: {exc}", file=sys.stderr)
        return 2
    except TrainingAborted as exc:
        print(f"mcc run: training aborted: {exc}", file=sys.stderr)
        return 1
    except (MCCError, OSError) as exc:
        print(f"mcc run: {exc}", file=sys.stderr)
        return 2
    from .metrics import markdown_table
    print(markdown_table({cfg.algo.upper(): report}), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
