"""Command-line entry point.

Usage::

    beliefprune entropy-study --config configs/entropy_study.json --out results/entropy
    beliefprune plan-bench    --config configs/plan_bench.json    --out results/bench
    beliefprune receding-run  --config configs/receding_setting1.json --out results/run1

On failure the process exits non-zero and prints one JSON object
``{"error": <kind>, "message": <text>}`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

from .harness import EXPERIMENTS, RUNNERS, ConfigError, load_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beliefprune", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default=None, help="output directory (default: the config's 'output')")
        p.add_argument("--seed-offset", type=int, default=0, help="added to every seed in the config")
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        return _fail("config-not-found", f"no such file: {args.config}", 2)
    except ConfigError as exc:
        return _fail("invalid-config", str(exc), 2)
    if cfg.experiment != args.command:
        return _fail("invalid-config", f"config is for {cfg.experiment!r}, not {args.command!r}", 2)
    out = args.out or cfg.output
    if not out:
        return _fail("invalid-config", "no output directory: pass --out or set 'output'", 2)
    cfg = cfg.with_seed_offset(args.seed_offset)
    try:
        result = RUNNERS[cfg.experiment](cfg, out)
    except Exception as exc:  # report anything as machine-readable
        return _fail(type(exc).__name__, str(exc), 1)
    files = sorted(p for p in result.tables) + sorted(result.timing)
    print(json.dumps({"experiment": cfg.experiment, "out": str(out), "tables": files}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
