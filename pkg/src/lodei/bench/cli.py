"""``lodei`` command-line interface.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from ..errors import ConfigError, LodeiError
from . import experiments
from .config import load_config

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

COMMANDS = {
    "run": experiments.run_experiment,
    "convergence": experiments.run_convergence,
    "selectors": experiments.run_selectors,
    "polytope": experiments.run_polytope,
}


def build_parser():
    p = argparse.ArgumentParser(prog="lodei", description="Low-rank integrators with DEIM projections.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=(fn.__doc__ or "").strip().splitlines()[0])
        sp.add_argument("--config", required=True, help="config file (key = value or JSON) or preset name")
        sp.add_argument("--seed", type=int, default=None, help="override the configured seed")
        sp.add_argument("--out", default=None, help="output directory (default: print the summary only)")
        sp.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config entry (same syntax as the text format; repeatable)",
        )
    return p


def _overrides(args):
    from .config import parse_text

    ov = parse_text("\n".join(args.set)) if args.set else {}
    if args.seed is not None:
        ov["seed"] = args.seed
    return ov


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        ov = _overrides(args)
        params = ov.pop("params", None)
        cfg = load_config(args.config, ov)
        if params:
            cfg = cfg.replace(params={**cfg.params, **params})
        result = COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"lodei: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"lodei: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (LodeiError, ArithmeticError, ValueError) as exc:
        print(f"lodei: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(_brief(result), indent=2, default=str))
    return EXIT_OK


def _brief(result):
    return {k: v for k, v in result.items() if k not in ("config", "points", "rows")}


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
