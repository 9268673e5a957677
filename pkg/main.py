# main.py

import argparse
import copy
import logging
import sys
from typing import Any, Dict

import yaml
from pydantic import ValidationError

from src.pipeline import ExperimentPipeline
from src.utils.config import ExperimentSpec, deep_merge, load_config
from src.utils.errors import GridPointError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Solve, verify and simulate AoI-optimal transmission policies under a power budget.")
    parser.add_argument("verb", nargs="?", choices=["solve", "verify", "simulate", "sweep"],
                        help="Pipeline to run. Defaults to experiment.pipelines from the config.")
    parser.add_argument("--config", type=str, help="Path to a YAML experiment file (default: config/config.yaml).")
    parser.add_argument("--out", type=str, help="Output directory for artifacts.")
    parser.add_argument("--seed", type=int, help="Root seed of the Monte Carlo simulation.")
    parser.add_argument("--p", type=float, nargs="+", help="Status generation probabilities.")
    parser.add_argument("--gamma", type=float, nargs="+", help="Channel failure probabilities.")
    parser.add_argument("--gamma-max", type=float, nargs="+", help="Transmission budgets.")
    parser.add_argument("--delta-max", type=int, help="AoI truncation bound.")
    parser.add_argument("--l-max", type=int, help="Maximum transmissions per update.")
    parser.add_argument("--epsilon-lambda", type=float, help="Width of the final multiplier bracket.")
    parser.add_argument("--trials", type=int, help="Number of simulated trials.")
    parser.add_argument("--horizon", type=int, help="Slots per simulated trial.")
    parser.add_argument("--trace", action="store_true", help="Write a per-slot trace of trial 0.")
    parser.add_argument("--no-cache", action="store_true", help="Ignore and do not write the solution cache.")
    parser.add_argument("--workers", type=int, help="Number of grid points solved in parallel.")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level.")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Turns the flags that were actually given into a nested config override."""
    mapping = {
        ("experiment", "output_dir"): args.out,
        ("experiment", "workers"): args.workers,
        ("grid", "p"): args.p,
        ("grid", "gamma"): args.gamma,
        ("grid", "gamma_max"): args.gamma_max,
        ("model", "delta_max"): args.delta_max,
        ("model", "l_max"): args.l_max,
        ("solver", "epsilon_lambda"): args.epsilon_lambda,
        ("simulation", "seed"): args.seed,
        ("simulation", "trials"): args.trials,
        ("simulation", "horizon"): args.horizon,
        ("simulation", "trace"): True if args.trace else None,
    }
    overrides: Dict[str, Any] = {}
    for (section, key), value in mapping.items():
        if value is not None:
            overrides.setdefault(section, {})[key] = value
    return overrides


def main(argv=None) -> int:
    """
    Command-line entry point.

    Returns:
        0 on success, 1 if a grid point failed or verification found
        violations, 2 if the configuration is invalid.
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s - %(levelname)s - %(message)s')

    # 1. --- Configuration Handling ---
    try:
        config = load_config(args.config)
        overrides = overrides_from_args(args)
        if overrides:
            logger.info(f"Applying command-line overrides: {overrides}")
            config = deep_merge(copy.deepcopy(config), overrides)
        spec = ExperimentSpec.model_validate(config)
    except (FileNotFoundError, TypeError, yaml.YAMLError, ValidationError) as e:
        logger.critical(f"Failed to handle configuration: {e}")
        return EXIT_CONFIG

    # 2. --- Pipeline Execution ---
    pipelines = [args.verb] if args.verb else spec.experiment.pipelines
    try:
        result = ExperimentPipeline(spec, use_cache=not args.no_cache).run(pipelines)
    except GridPointError as e:
        logger.critical(f"Pipeline failed: {e}")
        return EXIT_FAILURE

    if "verify" in pipelines and result["violations"]:
        logger.error(f"Verification found {result['violations']} violation(s).")
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
