"""``consistency-lab`` command line.

Exit codes: 0 success, 1 an asserted check failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import sys

from . import harness
from .config import ConfigError, load_config
from .consistency import TrainingError
from .schedule import ScheduleError

COMMANDS = {
    "schedule": "write the schedule and its property checks",
    "verify": "run the theory checks on the configured target",
    "train": "train a consistency stack and save it",
    "sample": "draw one-shot samples from a saved stack",
    "scaling": "W1-versus-T scaling study over T_list",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="consistency-lab", description="Consistency training and probability-flow checks on tractable targets.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", metavar="PATH", help="config file (default: bundled default.yaml)")
        p.add_argument("--seed", type=int, metavar="N", help="override the config seed")
        p.add_argument("--out", metavar="DIR", help="override the output directory")
        p.add_argument("--workers", type=int, metavar="N", help="parallel sweep cells")
        p.add_argument("--format", choices=["csv"], default="csv", help="output format (csv only)")
        p.add_argument("--quiet", action="store_true", help="suppress console summaries")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        cfg = load_config(args.config, {"seed": args.seed, "out": args.out, "workers": args.workers})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "schedule":
            return harness.run_schedule(cfg, args.quiet)
        if args.command == "verify":
            return harness.run_verify(cfg, args.quiet)[0]
        if args.command == "train":
            return harness.run_train(cfg, args.quiet)
        if args.command == "sample":
            return harness.run_sample(cfg, args.quiet)
        return harness.run_scaling(cfg, args.quiet)[0]
    except (ScheduleError, TrainingError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
