"""Command line entry point: ``opinionsum <stage> --config run.yaml``.

Exit codes: 0 success (including a clean pause for human review),
1 runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .domain import OpinionError
from .pipeline import STAGES, Pipeline, StageStatus

log = logging.getLogger("opinionsum")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--provider", choices=("live", "mock"))
    common.add_argument("--out-dir", help="output directory (overrides config)")
    common.add_argument("--workers", type=int, help="worker pool size (overrides config)")
    common.add_argument("--force", action="store_true", help="re-run even when manifests are current")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="opinionsum", description="Theme-based opinion summarization pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)
    for stage in STAGES:
        sub.add_parser(stage, parents=[common], help=f"run the {stage} stage")
    sub.add_parser("run-all", parents=[common], help="run every stage in order, resuming where possible")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(
            args.config, seed=args.seed, provider=args.provider, out_dir=args.out_dir, workers=args.workers
        )
        pipe = Pipeline(cfg)
        if args.command == "run-all":
            status = pipe.run_all(force=args.force)
        else:
            status = pipe.run_stage(args.command, force=args.force)
    except OpinionError as e:
        log.error("%s: %s", type(e).__name__, e)
        return 1
    if status is StageStatus.PAUSED:
        print(f"paused: awaiting {cfg.decisions_path}", file=sys.stderr)
    else:
        print(f"{args.command}: {status.value}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
