# src/cli.py
import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from .config import ConfigError, TrainConfig, default_data_dir, default_out_dir, load_config
from .evaluation import encode_dataset, evaluate
from .local_loader import DataFormatError, DataMissingError, load_dataset_dir, save_dataset
from .losses import assign_anchors
from .optim import OptimizerError
from .pipeline import (ABLATION_VARIANTS, FLOAT_FORMAT, SWEEP_MODES, TrainingAborted, anchor_sweep,
                       kmeans_baseline_train, load_run, loss_ablation, train)
from .save_data import CheckpointError
from .synthetic import gen_synthetic
from .tensor import NumericError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """Reports usage errors with exit code 1 (invalid parameters), keeping 2 for data errors."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"ERROR: {message}\n")


def _int_list(text: str) -> List[int]:
    try:
        return [int(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got '{text}'")


def _str_list(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _resolved_config(args: argparse.Namespace) -> TrainConfig:
    """Defaults < config file < command-line flags."""
    config = load_config(args.config)
    overrides = {}
    for flag, attr in (("mode", "mode"), ("anchors", "anchors"), ("seed", "seed"),
                       ("epochs", "epochs"), ("max_steps", "max_steps")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[attr] = value
    return config.replace(**overrides) if overrides else config


# ==============================================================
# COMMANDS
# ==============================================================

def cmd_train(args: argparse.Namespace) -> int:
    config = _resolved_config(args)
    train_set, _ = load_dataset_dir(args.data_dir)
    train(config, train_set, args.out)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    run = load_run(args.checkpoint)
    train_set, test_set = load_dataset_dir(args.data_dir)
    report = evaluate(run.model, run.anchors, train_set, test_set, run.config.eval_epsilon)
    for line in report.to_lines():
        print(line)
    if args.csv is not None:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        report.to_frame().to_csv(args.csv, index=False, float_format=FLOAT_FORMAT)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _resolved_config(args)
    train_set, test_set = load_dataset_dir(args.data_dir)
    frame = anchor_sweep(config, args.anchor_counts, train_set, test_set, args.modes, args.out)
    if frame["rel"].notna().any():
        return EXIT_OK
    print("ERROR: every sweep cell failed", file=sys.stderr)
    return EXIT_NUMERIC


def cmd_export_latents(args: argparse.Namespace) -> int:
    """
    Writes eval-mode latents of the test split plus one row per anchor.

    Sample rows carry ``anchor_index = -1``; anchor rows carry ``sample_index = -1``,
    ``true_label = -1`` and ``assigned_anchor = anchor_index``.
    """
    run = load_run(args.checkpoint)
    _, test_set = load_dataset_dir(args.data_dir)
    latents = encode_dataset(run.model, test_set.samples)
    n, d = latents.shape
    z_columns = [f"z_{k}" for k in range(d)]

    labels = test_set.labels if test_set.labels is not None else np.full(n, -1, dtype=np.int64)
    assigned = assign_anchors(latents, run.anchors).labels if run.anchors is not None else np.full(n, -1)
    frame = pd.DataFrame(latents, columns=z_columns)
    frame.insert(0, "sample_index", np.arange(n))
    frame.insert(1, "true_label", labels)
    frame.insert(2, "assigned_anchor", assigned)
    frame.insert(3, "anchor_index", -1)
    if run.anchors is not None:
        m = run.anchors.m
        anchor_rows = pd.DataFrame(run.anchors.anchors.numpy(), columns=z_columns)
        anchor_rows.insert(0, "sample_index", -1)
        anchor_rows.insert(1, "true_label", -1)
        anchor_rows.insert(2, "assigned_anchor", np.arange(m))
        anchor_rows.insert(3, "anchor_index", np.arange(m))
        frame = pd.concat([frame, anchor_rows], ignore_index=True)

    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(args.out, index=False, float_format=FLOAT_FORMAT)
    print(f"{len(frame)} Zeilen nach '{args.out}' exportiert.")
    return EXIT_OK


def cmd_gen_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    test_per_cluster = args.test_per_cluster or args.per_cluster
    train_set = gen_synthetic(args.clusters, args.per_cluster, args.dim, args.spread, args.seed, "train")
    test_set = gen_synthetic(args.clusters, test_per_cluster, args.dim, args.spread, args.seed, "test")
    save_dataset(train_set, out / "train.nvcd")
    save_dataset(test_set, out / "test.nvcd")
    return EXIT_OK


def cmd_ablation(args: argparse.Namespace) -> int:
    config = _resolved_config(args)
    train_set, test_set = load_dataset_dir(args.data_dir)
    frame = loss_ablation(config, train_set, test_set, args.variants, args.out)
    return EXIT_OK if frame["rel"].notna().any() else EXIT_NUMERIC


def cmd_baseline(args: argparse.Namespace) -> int:
    config = _resolved_config(args)
    train_set, _ = load_dataset_dir(args.data_dir)
    kmeans_baseline_train(config, train_set, args.out, args.update)
    return EXIT_OK


# ==============================================================
# PARSER
# ==============================================================

def _add_run_flags(parser: argparse.ArgumentParser, with_mode: bool = True):
    parser.add_argument("--config", type=Path, default=None, help="ConfigFile (key = value lines)")
    parser.add_argument("--data-dir", type=Path, default=default_data_dir(), help="dataset directory")
    parser.add_argument("--out", type=Path, default=default_out_dir(), help="output directory")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--max-steps", type=int, default=None)
    if with_mode:
        parser.add_argument("--mode", default=None, help="vae | nvc | nvc_ml | nvc_no_mass")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nvc", description="Nebula variational coding: training, evaluation and experiments")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("train", help="train a model and write metrics.csv / final.ckpt")
    _add_run_flags(p)
    p.add_argument("--anchors", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = commands.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data-dir", type=Path, default=default_data_dir())
    p.add_argument("--csv", type=Path, default=None)
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser("sweep", help="anchor-count sweep, writes sweep.csv")
    _add_run_flags(p, with_mode=False)
    p.add_argument("--anchors", dest="anchor_counts", type=_int_list, required=True, help="e.g. 1,4,10")
    p.add_argument("--modes", type=_str_list, default=list(SWEEP_MODES), help="e.g. nvc,nvc_ml")
    p.set_defaults(func=cmd_sweep)

    p = commands.add_parser("export-latents", help="export test latents and anchors as CSV")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data-dir", type=Path, default=default_data_dir())
    p.add_argument("--out", type=Path, required=True, help="CSV file")
    p.set_defaults(func=cmd_export_latents)

    p = commands.add_parser("gen-synth", help="write a synthetic Gaussian-mixture dataset")
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--per-cluster", type=int, required=True)
    p.add_argument("--test-per-cluster", type=int, default=None)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--spread", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = commands.add_parser("ablation", help="loss ablation, writes ablation.csv")
    _add_run_flags(p, with_mode=False)
    p.add_argument("--variants", type=_str_list, default=list(ABLATION_VARIANTS))
    p.set_defaults(func=cmd_ablation)

    p = commands.add_parser("baseline", help="K-means / Robbins-Monro baseline, writes baseline_metrics.csv")
    _add_run_flags(p, with_mode=False)
    p.add_argument("--anchors", type=int, default=None)
    p.add_argument("--update", choices=("kmeans", "robbins_monro"), default=None)
    p.set_defaults(func=cmd_baseline)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parses the command line, runs the command and maps failures to exit codes:
    0 success, 1 invalid config / checkpoint / parameters, 2 missing or corrupt data,
    3 numeric failure.
    """
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DataMissingError, DataFormatError) as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingAborted, NumericError) as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CheckpointError, OptimizerError, ValueError) as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_CONFIG
