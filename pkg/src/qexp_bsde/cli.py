"""Command line entry point: ``qexp-bsde run <config.json>``."""

from __future__ import annotations

import argparse
import logging
import sys

from .drivers import DRIVER_PRESETS
from .errors import ConfigError, PipelineError
from .experiments import SCENARIOS, ExperimentConfig, emit_report, run_experiment
from .levy import MODEL_PRESETS
from .problems import PROBLEM_PRESETS

EXIT_CONFIG = 2
EXIT_PIPELINE = 3


def _first_line(doc):
    return (doc or "").strip().splitlines()[0].replace("``", "") if doc else ""


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qexp-bsde", description="Numerical experiments for Q_exp BSDEs with jumps.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario from a JSON config")
    run.add_argument("config", help="path to the JSON config")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--out-dir", help="override the output directory")
    run.add_argument("--quiet", action="store_true", help="do not print the summary")
    sub.add_parser("list-scenarios", help="list registered scenarios")
    sub.add_parser("list-presets", help="list problem, model and driver presets")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-scenarios":
        for name, fn in SCENARIOS.items():
            print(f"{name:24s} {_first_line(fn.__doc__)}")
        return 0
    if args.command == "list-presets":
        for title, reg in (("problems", PROBLEM_PRESETS), ("models", MODEL_PRESETS), ("drivers", DRIVER_PRESETS)):
            print(f"{title}:")
            for name, fn in reg.items():
                print(f"  {name:22s} {_first_line(fn.__doc__)}")
        return 0
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out_dir is not None:
            cfg.out_dir = args.out_dir
        cfg.validate()
        manifest = run_experiment(cfg)
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    if not args.quiet:
        print(emit_report(manifest), end="")
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
