"""
Command-line entry point: synth, train-tign, train-tien, propose, eval, ablate
"""

import argparse
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from srg.config import build_run_config
from srg.errors import SRGError
from srg.logger import configure_log_dir, log_error, log_info
from srg.pipeline import (
    RunLayout,
    cmd_ablate,
    cmd_eval,
    cmd_propose,
    cmd_synth,
    cmd_train_tien,
    cmd_train_tign,
)

COMMANDS: Dict[str, Callable] = {
    "synth": cmd_synth,
    "train-tign": cmd_train_tign,
    "train-tien": cmd_train_tien,
    "propose": cmd_propose,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srg", description="Temporal action proposals from snippet relatedness")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        command = sub.add_parser(name)
        command.add_argument("--out", type=Path, default=Path("run"), help="run directory")
        command.add_argument("--config", type=Path, default=None, help="key = value run configuration file")
        command.add_argument("--profile", default=None, help="tiny or paperish")
        command.add_argument("--seed", type=int, default=None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_log_dir(args.out / "logs")
    overrides = {} if args.seed is None else {"seed": args.seed}
    try:
        config = build_run_config(args.profile, args.config, overrides)
        log_info(f"{args.command} started", {"profile": config.profile, "seed": config.seed, "out": args.out})
        result = COMMANDS[args.command](config, RunLayout.for_run(config, args.out))
    except SRGError as e:
        log_error(f"{args.command} failed", str(e), {"error_type": type(e).__name__})
        print(f"srg {args.command}: {e}", file=sys.stderr)
        return 1

    log_info(f"{args.command} completed", result)
    print(result["message"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
