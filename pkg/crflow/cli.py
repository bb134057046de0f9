"""Command-line front end: run, sweep, check and oracle subcommands."""

from __future__ import annotations

import argparse
import json
import sys
from typing import List, Optional

import numpy as np

from .checks import command_check
from .config import load_config
from .engine import EXIT_CODES, EXIT_ERROR, oracle, run, sweep


def parse_lambda_grid(text: str) -> List[float]:
    """'A:B:K' -> K evenly spaced values from A to B; a comma list is taken as is."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"expected A:B:K, got {text!r}")
        try:
            a, b, k = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e)) from e
        if k < 1:
            raise argparse.ArgumentTypeError("K must be >= 1")
        return [float(v) for v in np.linspace(a, b, k)]
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crflow", description="Pseudoharmonic heat flow on Heisenberg nilmanifolds")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="Run one flow from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="Output folder (default: [output] dir)")

    p_sweep = sub.add_parser("sweep", help="Rerun the flow over an amplitude grid")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--lambda", dest="lambdas", required=True, type=parse_lambda_grid,
                         help="A:B:K (linspace) or a comma-separated list")
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--workers", default=1, type=int)

    p_check = sub.add_parser("check", help="Run the invariant check suite")
    p_check.add_argument("--level", choices=("quick", "full"), default="quick")

    p_oracle = sub.add_parser("oracle", help="Compare a flat-torus run with the closed-form solution")
    p_oracle.add_argument("--config", required=True)
    p_oracle.add_argument("--t", dest="t", required=True, type=float)
    p_oracle.add_argument("--refine", action="store_true", help="Also run at 2N and report the error ratio")
    return parser


def _print_logs(logs: List[str]) -> None:
    for line in logs:
        print(line)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            result = run(load_config(args.config), args.out)
            _print_logs(result["logs"])
            return EXIT_CODES[result["termination"]]
        if args.command == "sweep":
            result = sweep(load_config(args.config), args.lambdas, args.out, workers=args.workers)
            _print_logs(result["logs"])
            return 0
        if args.command == "check":
            report = command_check(args.level)
            _print_logs(report["logs"])
            print(f"{len(report['hard_pass'])} passed, {len(report['hard_fail'])} failed")
            return 0 if report["passed"] else EXIT_ERROR
        if args.command == "oracle":
            result = oracle(load_config(args.config), args.t, refine=args.refine)
            _print_logs(result["logs"])
            print(json.dumps(result["rows"], indent=2))
            return 0
    except Exception as e:
        print(f"crflow: error: {e}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
