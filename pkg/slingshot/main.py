"""
Command-line entry point.

    python -m slingshot.main <command> [--preset NAME | --config PATH] [--out DIR] [--seed N] ...

Commands: train, attack, fv, eval, sweep, detect, toy.

Exit codes: 0 success, 1 invalid input (config, files, checkpoints),
2 numerical failure (non-finite loss or feature value).

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from slingshot.config import Settings, reload_settings, validate_settings
from slingshot.core.errors import NumericalError, SlingshotError
from slingshot.core.telemetry import reset_telemetry
from slingshot.presets import PRESETS, get_preset
from slingshot.schemas import RunConfig
from slingshot.workers.experiment_runner import ExperimentRunner

logger = logging.getLogger(__name__)

COMMANDS = ("train", "attack", "fv", "eval", "sweep", "detect", "toy")
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class JsonFormatter(logging.Formatter):
    """One JSON object per log line."""

    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "time": self.formatTime(record),
            "logger": record.name,
            "level": record.levelname,
            "message": record.getMessage(),
        }
        if record.exc_info:
            entry["exc_info"] = self.formatException(record.exc_info)
        return json.dumps(entry)


def setup_logging(settings: Settings) -> None:
    if settings.log_format == "json":
        handler = logging.StreamHandler()
        handler.setFormatter(JsonFormatter())
        logging.basicConfig(level=getattr(logging, settings.log_level), handlers=[handler], force=True)
    else:
        logging.basicConfig(
            level=getattr(logging, settings.log_level),
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            force=True,
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slingshot",
        description="Train, attack and audit models with Gradient Slingshots on feature visualization.",
    )
    parser.add_argument("command", choices=COMMANDS)
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--config", type=Path, help="Run config (JSON)")
    source.add_argument("--preset", choices=sorted(PRESETS), help="Built-in run config")
    parser.add_argument("--out", type=Path, help="Output directory (default: $SLINGSHOT_OUTPUT_ROOT/<config name>)")
    parser.add_argument("--seed", type=int, help="Master seed override")
    parser.add_argument("--checkpoint", type=Path, help="Model to attack / visualize / evaluate / sweep")
    parser.add_argument("--original", type=Path, help="Pre-attack checkpoint (detect, eval 'before' row)")
    parser.add_argument("--attacked", type=Path, help="Attacked checkpoint (detect)")
    parser.add_argument("--n-runs", type=int, help="Number of FV runs")
    parser.add_argument("--dump-config", action="store_true", help="Print the resolved config and exit")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    if args.config is not None:
        if not args.config.is_file():
            raise FileNotFoundError(f"Config {args.config} not found")
        cfg = RunConfig.from_file(args.config)
    else:
        cfg = get_preset(args.preset or ("toy" if args.command == "toy" else "mnist"))
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    return cfg


def dispatch(runner: ExperimentRunner, args: argparse.Namespace) -> None:
    if args.n_runs is not None and args.n_runs < 1:
        raise ValueError("--n-runs must be >= 1")
    command = args.command
    if command == "train":
        runner.run_train()
    elif command == "attack":
        runner.run_attack(args.checkpoint)
    elif command == "fv":
        runner.run_fv(args.checkpoint, n_runs=args.n_runs)
    elif command == "eval":
        runner.run_eval(args.checkpoint, original=args.original, n_runs=args.n_runs)
    elif command == "sweep":
        runner.run_sweep(args.checkpoint, n_runs=args.n_runs)
    elif command == "detect":
        runner.run_detect(original=args.original, attacked=args.attacked)
    elif command == "toy":
        runner.run_toy()


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = reload_settings()
    setup_logging(settings)
    reset_telemetry()

    try:
        validate_settings(settings)
        cfg = load_config(args)
        if args.dump_config:
            print(cfg.model_dump_json(indent=2))
            return EXIT_OK
        out_dir = args.out or settings.output_root / cfg.name
        logger.info(f"{args.command}: config '{cfg.name}' (seed {cfg.seed}) -> {out_dir}")
        runner = ExperimentRunner(cfg, out_dir)
        dispatch(runner, args)
        runner.finish(args.command)
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except (ValidationError, ValueError, FileNotFoundError, SlingshotError) as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
