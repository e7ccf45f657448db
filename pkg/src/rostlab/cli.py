"""Command-line entry point: one subcommand per experiment kind, plus
``replay`` and ``summarize``. Batch-oriented: exit status 0 means every
assertion passed, 1 means a statistical failure, 2 a config/guard error."""

from __future__ import annotations

import argparse
import json
import sys

from .harness import (
    EXPERIMENT_KINDS,
    ConfigError,
    ExperimentConfig,
    replay,
    run_experiment,
    summarize,
)


def _add_common(sub):
    sub.add_argument("--config", required=True, help="TOML experiment config")
    sub.add_argument("--seed", type=int, default=None, help="override master seed")
    sub.add_argument("--threads", type=int, default=None, help="worker threads")
    sub.add_argument("--out", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rostlab",
        description="Seeded overlap-structure experiments with CSV/JSON output.")
    subs = parser.add_subparsers(dest="command", required=True)
    for kind in EXPERIMENT_KINDS:
        _add_common(subs.add_parser(kind, help=f"run the {kind} experiment"))
    rp = subs.add_parser("replay", help="re-execute a run from its manifest")
    rp.add_argument("manifest", help="path to manifest.json")
    rp.add_argument("--threads", type=int, default=None)
    sm = subs.add_parser("summarize", help="aggregate completed runs")
    sm.add_argument("out_dir", help="directory containing run subdirectories")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            result = replay(args.manifest, threads=args.threads)
            print(json.dumps({"identical": result["identical"],
                              "mismatches": result["mismatches"]}, indent=2))
            return 0 if result["identical"] else 1
        if args.command == "summarize":
            aggregate = summarize(args.out_dir)
            print(json.dumps(aggregate, indent=2, default=float))
            return 0
        cfg = ExperimentConfig.from_toml(args.config)
        if cfg.kind != args.command:
            raise ConfigError(
                f"config kind {cfg.kind!r} does not match subcommand {args.command!r}")
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            cfg.threads = args.threads
        if args.out is not None:
            cfg.out_dir = args.out
        manifest = run_experiment(cfg)
        print(json.dumps({"run_dir": manifest.run_dir, "passed": manifest.passed,
                          "outputs": manifest.outputs}, indent=2))
        return manifest.exit_code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
