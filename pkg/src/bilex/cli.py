"""Command-line experiment runner.

Subcommands mirror the pipeline stages; ``run`` executes all of them. Exit
codes: 0 ok, 1 configuration error, 2 stage failure, 3 verification
mismatch. BILEX_OUTPUT_ROOT, when set, anchors relative output directories.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .pipeline import ALL_STAGES, MissingManifest, PipelineError, run_experiment, verify_manifest

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_STAGE = 2
EXIT_VERIFY = 3

_STAGE_COMMANDS = {
    "build-data": ("build-data",),
    "train-tokenizer": ("build-data", "train-tokenizer"),
    "train-model": ("build-data", "train-tokenizer", "train-model"),
    "eval": ("build-data", "train-tokenizer", "train-model", "eval"),
    "analyze": ("build-data", "train-tokenizer", "train-model", "analyze"),
    "report": ALL_STAGES,
    "run": ALL_STAGES,
}


def _resolve_output_dir(config: ExperimentConfig) -> ExperimentConfig:
    root = os.environ.get("BILEX_OUTPUT_ROOT")
    if root and not Path(config.output_dir).is_absolute():
        return dataclasses.replace(config, output_dir=str(Path(root) / config.output_dir))
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bilex", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for command in _STAGE_COMMANDS:
        p = sub.add_parser(command, help=f"run the {command} stage(s)")
        p.add_argument("-c", "--config", required=True, help="experiment config (.json or .toml)")
        p.add_argument("--condition", action="append", default=None,
                       help="restrict to a named condition (repeatable)")
        p.add_argument("--force", action="store_true", help="rebuild even when hashes match")
    v = sub.add_parser("verify", help="recompute artifact hashes against the run manifest")
    v.add_argument("directory", help="experiment output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "verify":
        try:
            divergent = verify_manifest(args.directory)
        except MissingManifest as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if divergent:
            for path in divergent:
                print(f"divergent: {path}")
            return EXIT_VERIFY
        print("ok")
        return EXIT_OK

    try:
        config = _resolve_output_dir(load_config(args.config))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        manifest, reports = run_experiment(
            config,
            force=args.force,
            stages=_STAGE_COMMANDS[args.command],
            conditions=args.condition,
        )
    except PipelineError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    print(f"config {manifest.config_hash[:12]}: {len(manifest.stages)} stage records in {config.output_dir}")
    for name, report in sorted(reports.items()):
        for metric, summary in sorted(report.get("metrics", {}).items()):
            print(f"  {name}: {metric} = {summary['mean']:.4f} ± {summary['std']:.4f} (n={summary['n_runs']})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
