"""Command-line entry point: run funnel stages from a config file."""

from __future__ import annotations

import argparse
import json
import sys

from .config import load_config, validate_config
from .demo import generate_demo
from .pipeline import STAGES, MissingArtifactError, PipelineError, run_all, run_stage

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atlas",
        description="School-mapping funnel: ingest, clean, negatives, features, "
                    "train, gapmap, candidates, serve, export.")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in (*STAGES, "all"):
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("--config", required=True, help="pipeline TOML config")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", help="override the output directory")
    demo = sub.add_parser("demo", help="generate the synthetic demo dataset")
    demo.add_argument("--out", required=True, help="directory to write the demo into")
    demo.add_argument("--seed", type=int, default=42)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "demo":
        summary = generate_demo(args.out, seed=args.seed)
        print(json.dumps(summary, indent=1, sort_keys=True))
        return EXIT_OK

    try:
        config = load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.seed is not None:
        config.seeds["master"] = args.seed
    if args.out:
        config.out_dir = args.out

    errors = validate_config(config)
    if errors:
        for err in errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_VALIDATION

    try:
        if args.command == "all":
            counts = run_all(config)
        else:
            counts = run_stage(args.command, config)
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - surface anything as a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(counts, indent=1, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
