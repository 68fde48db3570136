"""Command line: ``bbo run``, ``bbo compare`` and ``bbo list-experiments``.

Exit codes: 0 pass, 1 criteria failure (or an aborted seed), 2 config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .compare import CriterionError, compare
from .config import ConfigError, load_config
from .experiments import EXPERIMENTS
from .runner import run

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    res = run(cfg, jobs=args.jobs, out=args.out)
    for seed, path in sorted(res.per_seed.items()):
        print(f"seed {seed}: {path}")
    if res.aggregate:
        print(f"aggregate: {res.aggregate}")
    for seed, err in sorted(res.failures.items()):
        print(f"seed {seed} aborted: {err}", file=sys.stderr)
    return EXIT_OK if res.ok else EXIT_FAIL


def _cmd_compare(args) -> int:
    try:
        text = Path(args.criteria).read_text()
        verdicts = compare(text, args.csv)
    except (OSError, CriterionError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    for v in verdicts:
        if args.json:
            print(json.dumps(v.to_dict()))
        else:
            print(f"{'PASS' if v.passed else 'FAIL'}  {v.criterion}  ({v.detail})")
    return EXIT_OK if all(v.passed for v in verdicts) else EXIT_FAIL


def _cmd_list(args) -> int:
    for exp in EXPERIMENTS.values():
        print(f"{exp.id:15s} {exp.description}")
        print(f"{'':15s} algorithms: {', '.join(sorted(exp.algorithms))}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bbo", description="Bayesian Bellman operator experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run every seed of a config and write metric CSVs")
    p.add_argument("config")
    p.add_argument("--jobs", type=int, default=1, help="parallel seed workers")
    p.add_argument("--out", default=None, help="output directory (overrides the config's 'out')")
    p.set_defaults(func=_cmd_run)
    p = sub.add_parser("compare", help="check metric CSVs against a criteria file")
    p.add_argument("criteria")
    p.add_argument("csv", nargs="+")
    p.add_argument("--json", action="store_true", help="one JSON object per criterion")
    p.set_defaults(func=_cmd_compare)
    p = sub.add_parser("list-experiments", help="list experiment ids and their algorithms")
    p.set_defaults(func=_cmd_list)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("config error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
