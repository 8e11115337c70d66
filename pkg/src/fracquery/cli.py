"""Command line entry point.

Exit codes: 0 when every check passes, 1 when a check fails, 2 for
configuration errors (including infeasible parameters).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .compressed import InfeasibleParams
from .experiments import EXPERIMENTS, ConfigError, load_config, render_csv, run_experiment, schema_text

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracquery", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a TOML config")
    run.add_argument("config", help="path to the config file")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--trials", type=int, help="override the trial count")
    run.add_argument("--out", help="CSV output path ('-' for stdout)")
    sub.add_parser("list-experiments", help="list the named experiments")
    sub.add_parser("print-schema", help="print the config schema and per-experiment options")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-experiments":
        for name, spec in EXPERIMENTS.items():
            print(f"{name:18s} {spec.criterion}")
        return EXIT_PASS
    if args.command == "print-schema":
        sys.stdout.write(schema_text())
        return EXIT_PASS
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.trials is not None:
            if args.trials < 1:
                raise ConfigError("--trials must be >= 1")
            cfg.trials = args.trials
        result = run_experiment(cfg)
    except (ConfigError, InfeasibleParams) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = render_csv(cfg, result)
    out = args.out or cfg.output_path
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    for c in result.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {result.name}: {c.name} ({c.detail})", file=sys.stderr)
    return EXIT_PASS if result.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
