"""Command line entry point: ``oqft run`` and ``oqft validate``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .errors import OqftError
from .experiments import ConfigError, ExperimentConfig, SEED_LIMIT, run_experiment

EXIT_OK, EXIT_INVARIANT, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3


def _error(kind: str, err: BaseException, code: int) -> int:
    doc = {"error": kind, "type": type(err).__name__, "message": str(err), "exit_code": code}
    print(json.dumps(doc), file=sys.stderr)
    return code


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}")
    if not 0 <= v < SEED_LIMIT:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oqft", description="Run objective-field trajectory experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a JSON config")
    run.add_argument("config")
    run.add_argument("--seed", type=_seed, help="override the config seed")
    run.add_argument("--out", help="override the output directory")
    val = sub.add_parser("validate", help="parse and check a config without running it")
    val.add_argument("config")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        config = ExperimentConfig.load(args.config)
        if args.command == "run":
            if args.seed is not None:
                config = replace(config, seed=args.seed)
            if args.out:
                config = replace(config, output_dir=args.out)
    except (ConfigError, OSError, TypeError) as err:
        return _error("config", err, EXIT_USAGE)
    if args.command == "validate":
        print(json.dumps({"valid": True, "config": config.to_json()}, sort_keys=True))
        return EXIT_OK
    try:
        status, report = run_experiment(config)
    except OqftError as err:
        return _error("numerical", err, EXIT_NUMERICAL)
    except (ValueError, TypeError, KeyError) as err:
        return _error("config", err, EXIT_USAGE)
    failed = [k for k, v in report["invariants"].items() if not v]
    print(json.dumps({"status": report["status"], "output_dir": config.output_dir, "failed_invariants": failed}))
    return status


if __name__ == "__main__":
    sys.exit(main())
