"""Command-line interface: ``tripeval <command> --config run.json``.

Exit codes: 0 success, 2 validation or gate failure, 3 I/O problems,
4 unreadable or invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import io
from .config import load_config
from .errors import ConfigError, MissingInputsError, NetworkParseError, TripEvalError
from .pipeline import cmd_evaluate, cmd_synthesize, cmd_variants, render_report, top_cells

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_CONFIG = 4

log = logging.getLogger("tripeval")


def _config(args):
    return load_config(args.config, args.set or [], getattr(args, "seed", None), args.out_dir)


def _variants(args) -> int:
    summary = cmd_variants(_config(args), force=args.force, workers=args.workers)
    print(io.dumps(summary), end="")
    return EXIT_OK


def _synthesize(args) -> int:
    for p in cmd_synthesize(_config(args), workers=args.workers):
        print(p)
    return EXIT_OK


def _evaluate(args) -> int:
    cfg = _config(args)
    cmd_evaluate(cfg, workers=args.workers)
    print(cfg.out_dir / "evaluation" / "report.json")
    return EXIT_OK


def _top_cells(args) -> int:
    print(io.dumps(top_cells(_config(args), args.n)), end="")
    return EXIT_OK


def _report(args) -> int:
    print(render_report(io.read_json(args.report)), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tripeval", description="Evaluate synthetic trip data at road-network level.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=False):
        sp.add_argument("--config", required=True, help="run configuration JSON")
        sp.add_argument("--out-dir", help="override the output directory")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (dotted path, JSON value)")
        sp.add_argument("--workers", type=int, help="worker processes (default: $TRIPEVAL_WORKERS or 1)")
        if seed:
            sp.add_argument("--seed", type=int, help="synthesis seed")

    sp = sub.add_parser("variants", help="build matched, routed and straight-line variants")
    common(sp, seed=True)
    sp.add_argument("--force", action="store_true", help="match datasets that fail the matchability gate")
    sp.set_defaults(func=_variants)

    sp = sub.add_parser("synthesize", help="fit and sample the configured synthesizers")
    common(sp, seed=True)
    sp.set_defaults(func=_synthesize)

    sp = sub.add_parser("evaluate", help="compute the metric report")
    common(sp, seed=True)
    sp.set_defaults(func=_evaluate)

    sp = sub.add_parser("top-cells", help="list the most passed cells of the raw data")
    common(sp)
    sp.add_argument("-n", type=int, default=15)
    sp.set_defaults(func=_top_cells)

    sp = sub.add_parser("report", help="print a report JSON as tables")
    sp.add_argument("report")
    sp.set_defaults(func=_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, json.JSONDecodeError) as exc:
        log.error("config: %s", exc)
        return EXIT_CONFIG
    except (MissingInputsError, NetworkParseError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except TripEvalError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
