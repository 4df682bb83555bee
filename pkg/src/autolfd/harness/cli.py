"""Command-line entry point: ``autolfd <command> [--config file] [--seed n] [--out dir]``.

Exit status: 0 on success, 2 when a command cannot establish its property
(e.g. no inversion pair found), 1 on any other error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .experiments import (
    CertificationError,
    cmd_auto,
    cmd_compare_gd_bo,
    cmd_gen_data,
    cmd_metric_failure,
    cmd_train_encoder,
)

COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-encoder": cmd_train_encoder,
    "metric-failure": cmd_metric_failure,
    "auto": cmd_auto,
    "compare": cmd_compare_gd_bo,
}


def _summary_line(command: str, result) -> str:
    if command == "gen-data":
        return f"gen-data: {result['n_triplets']} triplets, corpus hash {result['corpus_hash']}"
    if command == "train-encoder":
        return f"train-encoder: holdout separation accuracy {result['holdout_accuracy']:.4f}, params {result['encoder']}"
    if command == "metric-failure":
        parts = []
        for case in result["cases"]:
            a, b = case["A"], case["B"]
            m = case["metric"]
            parts.append(
                f"{case['method']}-{case['letter']}: A({m}={a[m]:.4g}, distortion={a['shape_distortion']:.3g}) "
                f"vs B({m}={b[m]:.4g}, distortion={b['shape_distortion']:.3g})"
            )
        return "metric-failure: " + "; ".join(parts)
    if command == "auto":
        return "auto: " + "; ".join(
            f"seed {r.seed}: cost {r.initial_cost:.4g} -> {r.final_cost:.4g}" for r in result
        )
    return "compare: " + "; ".join(f"seed {r['seed']} {r['run']}: {r['final_cost']:.4g}" for r in result)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autolfd", description="Automatic hyperparameter tuning for DMP/KMP adaptation.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="single seed overriding the config's seed list")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, out=args.out, seeds=[args.seed] if args.seed is not None else None)
        result = COMMANDS[args.command](cfg)
    except CertificationError as exc:
        print(f"autolfd {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any failure as exit 1
        print(f"autolfd {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(_summary_line(args.command, result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
