#!/usr/bin/env python3
"""
Command-line entry point for the benchmark harness

    python cli.py run --config experiment.json [--out DIR] [--full-scale]
    python cli.py list-problems
    python cli.py list-criteria
    python cli.py replay --manifest results/run/manifest.json

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

import argparse
import sys
import tempfile
from pathlib import Path

from loguru import logger
from pydantic import ValidationError

from config.settings import settings
from src.services.experiment_service import ExperimentConfig, experiment_service
from src.services.results_service import results_service
from src.utils.exceptions import ConfigError, SurrogateDesignError
from src.utils.log_config import configure_logging

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Sequential kriging and co-kriging design experiments")
    parser.add_argument("--log-level", default=None, help="stderr log level (default from MFDOE_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a replicated experiment from a JSON config")
    run.add_argument("--config", required=True, help="experiment config file")
    run.add_argument("--out", default=None, help="output folder (default: <output_dir>/<config stem>)")
    run.add_argument("--full-scale", action="store_true", help="use the full-scale replicate and MCMC preset")

    sub.add_parser("list-problems", help="list benchmark problems")
    sub.add_parser("list-criteria", help="list criteria per surrogate and mode")

    replay = sub.add_parser("replay", help="re-run a manifest and compare CSV hashes")
    replay.add_argument("--manifest", required=True, help="manifest.json of a previous run")
    replay.add_argument("--out", default=None, help="folder for the replayed files (default: temporary)")
    return parser.parse_args(argv)


def _run(args) -> int:
    config = experiment_service.load_config(args.config)
    if args.full_scale:
        config = config.model_copy(update={"full_scale": True})
    if args.out:
        out_dir = Path(args.out)
    else:
        base = Path(config.output_dir) if config.output_dir else results_service.base_dir
        out_dir = base / Path(args.config).stem
    result = experiment_service.run(config)
    files = results_service.save_experiment(result, out_dir)
    for name, path in files.items():
        print(f"{name}: {path}")
    if result.failures:
        print(f"{len(result.failures)} replicate(s) failed, see {files['manifest.json']}")
    return EXIT_OK


def _replay(args) -> int:
    manifest = results_service.read_manifest(args.manifest)
    try:
        config = ExperimentConfig.model_validate(manifest["config"])
    except ValidationError as exc:
        raise ConfigError(f"Manifest config is invalid: {exc}") from exc
    result = experiment_service.run(config)

    with tempfile.TemporaryDirectory() as scratch:
        out_dir = Path(args.out) if args.out else Path(scratch)
        results_service.save_experiment(result, out_dir)
        matches = results_service.compare_hashes(manifest, out_dir)
    for name, same in matches.items():
        print(f"{name}: {'match' if same else 'DIFFERS'}")
    return EXIT_OK if all(matches.values()) else EXIT_RUNTIME


def main(argv=None) -> int:
    args = parse_args(argv)
    configure_logging(args.log_level)
    try:
        settings.validate_config()
        if args.command == "list-problems":
            for problem in experiment_service.list_problems():
                print(f"{problem['name']:<12} d={problem['dim']} levels={problem['levels']} "
                      f"costs={problem['costs']}  {problem['description']}")
            return EXIT_OK
        if args.command == "list-criteria":
            for group, names in experiment_service.list_criteria().items():
                print(f"{group}: {', '.join(names)}")
            return EXIT_OK
        if args.command == "run":
            return _run(args)
        return _replay(args)
    except (ConfigError, ValidationError) as exc:
        logger.error("Configuration error: {}", exc)
        return EXIT_CONFIG
    except SurrogateDesignError as exc:
        logger.error("Run failed: {}", exc)
        return EXIT_RUNTIME
    except ValueError as exc:
        # invalid MFDOE_* settings
        logger.error("Configuration error: {}", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
