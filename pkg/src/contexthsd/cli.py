"""Command-line entry point.

Seven resumable stage commands driven by one YAML config. Exit codes:
0 success, 1 validation failure, 2 missing upstream artifact, 3 generation
failure rate above threshold.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import GEN_MODES, apply_overrides, load_config
from .errors import (
    PipelineError,
    ThresholdExceededError,
    UpstreamMissingError,
    ValidationError,
)
from . import pipeline

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_UPSTREAM = 2
EXIT_THRESHOLD = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="path to the run config (YAML)")
    parser.add_argument("--provider", help="override the provider id from the config")
    parser.add_argument("--mock", action="store_true", help="force mock provider and mock encoder")
    parser.add_argument("--seed-base", type=int, help="override the base training seed")
    parser.add_argument("--runs", type=int, help="override the number of seeded runs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contexthsd",
        description="Context-augmented hate speech detection pipeline",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("ingest", help="load, validate, split, and write manifests")
    _add_common(p)

    p = commands.add_parser("gen-context", help="populate the generation cache for one mode")
    _add_common(p)
    p.add_argument("--mode", required=True, choices=GEN_MODES)

    p = commands.add_parser("represent", help="build classifier input matrices")
    _add_common(p)
    p.add_argument("--strategy", action="append", help="strategy name (repeatable; default: all)")

    p = commands.add_parser("train", help="train seeded classifiers")
    _add_common(p)
    p.add_argument("--strategy", action="append")
    p.add_argument("--task", action="append")

    p = commands.add_parser("eval", help="evaluate models and aggregate reports")
    _add_common(p)
    p.add_argument("--strategy", action="append")
    p.add_argument("--task", action="append")

    p = commands.add_parser("compare", help="prediction diff between two runs")
    _add_common(p)
    p.add_argument("--task", required=True)
    p.add_argument("--run-a", required=True, help="first strategy name")
    p.add_argument("--run-b", required=True, help="second strategy name")

    p = commands.add_parser("plot", help="render confusion matrices and the F1 summary")
    _add_common(p)
    return parser


def _selected(args, key: str, fallback: tuple[str, ...]) -> list[str]:
    values = getattr(args, key, None)
    return list(values) if values else list(fallback)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config)
        config = apply_overrides(
            config,
            provider=args.provider,
            mock=args.mock,
            seed_base=args.seed_base,
            runs=args.runs,
        )
        if args.command == "ingest":
            pipeline.run_ingest(config)
        elif args.command == "gen-context":
            pipeline.run_gen_context(config, args.mode)
        elif args.command == "represent":
            for strategy in _selected(args, "strategy", config.strategies):
                result = pipeline.run_represent(config, strategy)
                if result["status"] == "up-to-date":
                    print(f"represent {strategy}: up-to-date")
        elif args.command == "train":
            for strategy in _selected(args, "strategy", config.strategies):
                for task in _selected(args, "task", config.tasks):
                    result = pipeline.run_train(config, strategy, task)
                    if result["status"] == "up-to-date":
                        print(f"train {task}/{strategy}: up-to-date")
        elif args.command == "eval":
            for strategy in _selected(args, "strategy", config.strategies):
                for task in _selected(args, "task", config.tasks):
                    result = pipeline.run_eval(config, strategy, task)
                    if result["status"] == "up-to-date":
                        print(f"eval {task}/{strategy}: up-to-date")
        elif args.command == "compare":
            pipeline.run_compare(config, args.task, args.run_a, args.run_b)
        elif args.command == "plot":
            pipeline.run_plot(config)
    except ThresholdExceededError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_THRESHOLD
    except UpstreamMissingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
