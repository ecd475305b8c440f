"""Command-line entry point: ``echoqfi run`` and ``echoqfi validate``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .errors import CapacityError
from .harness import (
    EXIT_CAPACITY, EXIT_CONFIG, EXIT_FAILED, EXIT_OK, SEED_MAX, ConfigError, ExperimentConfig,
    load_config, print_table, resolve_workers, run, study_validate, validate_config,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="echoqfi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one study from a JSON config")
    p_run.add_argument("--config", required=True, type=Path, help="JSON experiment config")
    p_run.add_argument("--seed", type=int, help="override the config seed")
    p_run.add_argument("--workers", type=int, help="worker processes (default: $ECHOQFI_WORKERS or 1)")
    p_run.add_argument("--out", type=Path, help="output directory (default: config 'output')")
    sub.add_parser("validate", help="run the invariant suite")
    return parser


def _config_error(exc: ConfigError) -> int:
    print("invalid configuration:", file=sys.stderr)
    for problem in exc.problems:
        print(f"  {problem}", file=sys.stderr)
    return EXIT_CONFIG


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config, validate=False)
        if args.seed is not None:
            if not 0 <= args.seed <= SEED_MAX:
                raise ConfigError(["--seed: must be a 64-bit unsigned integer"])
            cfg = replace(cfg, seed=args.seed)
        validate_config(cfg)
        workers = resolve_workers(args.workers)
    except ConfigError as exc:
        return _config_error(exc)
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    result = run(cfg, workers, args.out)
    if result.exit_code == EXIT_CAPACITY:
        print(result.message, file=sys.stderr)
        return result.exit_code
    if cfg.study == "validate":
        print_table(result.table)
    print(f"wrote {result.csv_path} and {result.json_path}")
    return result.exit_code


def cmd_validate(args) -> int:
    try:
        table = study_validate(ExperimentConfig(study="validate"))
    except CapacityError as exc:
        print(f"capacity exceeded: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    print_table(table)
    ok = table.meta["all_passed"]
    print("all checks passed" if ok else "some checks FAILED")
    return EXIT_OK if ok else EXIT_FAILED


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return cmd_run(args) if args.command == "run" else cmd_validate(args)


if __name__ == "__main__":
    sys.exit(main())
