"""Command-line entry point.

    speccal gen|train|calibrate|report|sweep|ood --config <path>
            [--out <dir>] [--seeds N] [--bins B]

Exit codes: 0 success, 1 validation/config error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .experiment import ExperimentConfig, run_pipeline


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="speccal",
                                     description="Spectrum-classifier calibration benchmark")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("gen", "generate the synthetic ROI datasets"),
        ("train", "train the seed sweep and dump logits"),
        ("calibrate", "fit TS / I-Max / GP calibrators per seed"),
        ("report", "write the main table, reliability curves and histograms"),
        ("sweep", "run the corruption severity sweep"),
        ("ood", "analyze confidences on the out-of-distribution set"),
        ("all", "run every stage listed in the config"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--seeds", type=int, help="train only the first N seeds (0..N-1)")
        p.add_argument("--bins", type=int, help="override the ECE bin count B")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.out:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    if args.seeds is not None:
        if args.seeds < 1:
            raise ValueError("--seeds must be >= 1")
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seeds=tuple(range(args.seeds))))
    if args.bins is not None:
        if args.bins < 1:
            raise ValueError("--bins must be >= 1")
        cfg = dataclasses.replace(cfg, metrics=dataclasses.replace(cfg.metrics, num_bins=args.bins))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "all":
            run_pipeline(cfg)
        else:
            run_pipeline(cfg, stages=(args.command,))
    except (OSError, FileNotFoundError) as exc:
        print(f"speccal: I/O error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, RuntimeError) as exc:
        print(f"speccal: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
