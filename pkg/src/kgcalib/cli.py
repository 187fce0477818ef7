"""Command-line interface.

Subcommands: train, calibrate, eval-calibration, eval-ranking, classify,
sweep-base-rate, sweep-sensitivity, report. Each accepts a config file
(``--config``), arbitrary ``--set key=value`` overrides, and first-class
flags for the common options; flags take precedence over ``--set``, which
takes precedence over the file. Output goes to the configured out_dir,
prefixed by ``$KGCALIB_OUT_ROOT`` when that is set and the path is relative.

Exit status: 0 on success, 2 for configuration problems, 1 for runtime
failures. Failures print a ``[stage] message`` diagnostic to stderr.
"""

from __future__ import annotations

import argparse
import sys

from .exceptions import ConfigError, KGCalibError, ParseError, StageError
from .pipeline import (
    ExperimentConfig,
    load_config,
    run_base_rate_sweep,
    run_pipeline,
    run_sensitivity,
)

_STAGE_BY_COMMAND = {
    "train": ("train",),
    "calibrate": ("calibrate",),
    "eval-calibration": ("evaluate",),
    "eval-ranking": ("rank-eval",),
    "classify": ("classify",),
    "report": ("report",),
}

# (flag, config key, kwargs for add_argument)
_FLAG_SPECS = [
    ("--train", "train_path", {"metavar": "PATH", "help": "training triples (TSV)"}),
    ("--valid", "valid_path", {"metavar": "PATH", "help": "validation triples (TSV)"}),
    ("--test", "test_path", {"metavar": "PATH", "help": "test triples (TSV)"}),
    ("--out", "out_dir", {"metavar": "DIR", "help": "output directory"}),
    ("--model", "model", {"help": "model kind: transe | distmult | complex | hole"}),
    ("--embedding-dim", "embedding_dim", {"type": int, "metavar": "K"}),
    ("--epochs", "epochs", {"type": int}),
    ("--learning-rate", "learning_rate", {"type": float, "metavar": "LR"}),
    ("--batch-size", "batch_size", {"type": int}),
    ("--loss", "loss", {"help": "pairwise | nll | multiclass_nll | self_adversarial"}),
    ("--negatives-per-positive", "negatives_per_positive", {"type": int, "metavar": "N"}),
    ("--base-rate", "base_rate", {"type": float, "metavar": "ALPHA",
     "help": "assumed positive base rate for synthetic calibration"}),
    ("--calibration-negatives-per-positive", "calibration_negatives_per_positive",
     {"type": int, "metavar": "N"}),
    ("--seed", "seed", {"type": int}),
    ("--n-bins", "n_bins", {"type": int, "help": "reliability diagram bins"}),
    ("--tie-policy", "tie_policy", {"help": "pessimistic | optimistic | mean"}),
]


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", "-c", metavar="FILE", help="flat key=value config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    for flag, key, kwargs in _FLAG_SPECS:
        parser.add_argument(flag, dest=f"flag_{key}", **kwargs)
    labeled = parser.add_mutually_exclusive_group()
    labeled.add_argument(
        "--labeled",
        dest="flag_labeled",
        action="store_const",
        const="true",
        help="valid/test files carry a fourth label column (default)",
    )
    labeled.add_argument(
        "--positive-only",
        dest="flag_labeled",
        action="store_const",
        const="false",
        help="valid/test files are positives-only triples",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgcalib",
        description="Train knowledge graph embeddings and calibrate their scores.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "train": "train embeddings and write a checkpoint",
        "calibrate": "fit calibrators on the validation split",
        "eval-calibration": "Brier/log-loss/reliability of each calibrator on test",
        "eval-ranking": "filtered or raw ranking metrics on test positives",
        "classify": "triple classification via learned thresholds and fixed 0.5",
        "sweep-base-rate": "calibration quality across assumed base rates",
        "sweep-sensitivity": "Brier over a training-ratio x dimension grid",
        "report": "full pipeline: train, calibrate, evaluate, rank, report",
    }
    for command, blurb in descriptions.items():
        command_parser = sub.add_parser(command, help=blurb, description=blurb)
        _add_common_arguments(command_parser)
    return parser


def _config_from_args(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    for _, key, _kwargs in _FLAG_SPECS:
        value = getattr(args, f"flag_{key}", None)
        if value is not None:
            overrides.append(f"{key}={value}")
    if getattr(args, "flag_labeled", None) is not None:
        overrides.append(f"labeled={args.flag_labeled}")
    return load_config(args.config, overrides)


def _print_key_numbers(command: str, bundle) -> None:
    out = bundle.out_dir
    if command == "train":
        final = bundle.model_info.get("final_mean_loss")
        print(f"trained {bundle.model_info.get('kind')}: final mean loss {final:.6g}"
              if final is not None else "trained (loss history unavailable)")
        print(f"checkpoint: {bundle.checkpoint_path}")
    elif command == "calibrate":
        for tag, info in bundle.calibration.items():
            if "slope" in info:
                print(f"{tag}: slope {info['slope']:.6g}, intercept {info['intercept']:.6g}")
            else:
                print(f"{tag}: {info['n_breakpoints']} breakpoints")
        print(f"calibrators written under {out}/calibrators")
    elif command == "eval-calibration":
        for tag, metrics in bundle.evaluation.items():
            print(
                f"{tag}: brier {metrics['brier']:.4f}, log_loss {metrics['log_loss']:.4f}"
            )
    elif command == "eval-ranking":
        r = bundle.ranking
        hits = ", ".join(f"hits@{k} {v:.4f}" for k, v in r["hits_at"].items())
        print(
            f"{r['mode']} ranking ({r['tie_policy']} ties): MR {r['mean_rank']:.2f}, "
            f"MRR {r['mean_reciprocal_rank']:.4f}, {hits}"
        )
    elif command == "classify":
        thresholded = bundle.classification.get("thresholded_raw")
        if thresholded:
            print(f"per-relation thresholds: accuracy {thresholded['accuracy']:.4f}")
        for tag, acc in bundle.classification.get("fixed_half", {}).items():
            print(f"fixed 0.5 on {tag}: accuracy {acc:.4f}")
    elif command == "report":
        print(f"summary: {out}/summary.json")
    print(f"artifacts: {out}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config_from_args(args)
    except (ConfigError, ParseError, OSError) as exc:
        print(f"[config] {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "sweep-base-rate":
            rows = run_base_rate_sweep(config)
            out = config.resolved_out_dir()
            print(f"swept {len(rows)} base rates; results in {out}/sweep.csv")
        elif args.command == "sweep-sensitivity":
            rows = run_sensitivity(config)
            failures = sum(1 for row in rows if row.get("error"))
            out = config.resolved_out_dir()
            print(
                f"sensitivity grid: {len(rows)} cells ({failures} failed); "
                f"results in {out}/sensitivity.csv"
            )
        else:
            bundle = run_pipeline(config, stages=_STAGE_BY_COMMAND[args.command])
            _print_key_numbers(args.command, bundle)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"[config] {exc}", file=sys.stderr)
        return 2
    except KGCalibError as exc:
        print(f"[error] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
