"""Command-line runner.

::

    spintherm [--workers N] run <config.toml>
    spintherm validate <config.toml>
    spintherm oracle <name>|all

Exit codes: 0 success, 2 configuration error, 3 numerical or domain error.
The offending key or quantity is named on stderr.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import sys
import time

from . import __version__
from .config import OUTPUT_ROOT_ENV, load_config
from .errors import ConfigError, DomainError
from .experiments import EXPERIMENT_FUNCS
from .output import write_record

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DOMAIN = 3


def _stamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def run(config_path, workers: int = 1) -> int:
    """Run one experiment config and write its results; returns an exit code."""
    try:
        cfg = load_config(config_path)
        started = _stamp()
        t0 = time.perf_counter()
        record = EXPERIMENT_FUNCS[cfg.experiment](cfg, workers=workers)
        paths = write_record(
            record, cfg.output_dir, csv=cfg.write_csv, json_=cfg.write_json,
            run_log={"started": started, "finished": _stamp(),
                     "elapsed_seconds": f"{time.perf_counter() - t0:.3f}",
                     "workers": workers, "config": config_path, "version": __version__},
        )
    except ConfigError as exc:
        print(f"config error [key: {exc.key}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as exc:
        print(f"domain error [quantity: {exc.quantity}]: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    for p in paths:
        print(p)
    return EXIT_OK


def validate(config_path) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error [key: {exc.key}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"ok: experiment '{cfg.experiment}', output {cfg.output_dir}")
    return EXIT_OK


def oracle(name: str) -> int:
    from .oracles import ORACLES, report

    names = ORACLES if name == "all" else (name,)
    for n in names:
        try:
            lines = report(n)
        except KeyError:
            print(f"config error [key: oracle]: unknown oracle '{n}'; "
                  f"choose from {', '.join(ORACLES)} or all", file=sys.stderr)
            return EXIT_CONFIG
        print("\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spintherm",
        description="Thermalization, ensemble and dynamical-decoupling experiments on small spin systems.",
        epilog=f"Relative output directories resolve against ${OUTPUT_ROOT_ENV} (default: cwd).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--workers", type=int, default=1,
                        help="worker processes for independent tasks (results do not depend on it)")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_val = sub.add_parser("validate", help="parse a config without running it")
    p_val.add_argument("config")
    p_or = sub.add_parser("oracle", help="print independent reference values")
    p_or.add_argument("name", help="beta, gqme, visits, multinomial, dd, reverse or all")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("config error [key: workers]: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "run":
        return run(args.config, workers=args.workers)
    if args.command == "validate":
        return validate(args.config)
    return oracle(args.name)


if __name__ == "__main__":
    sys.exit(main())
