"""Command line entry point: ``wienerou <command> [--config PATH] ...``.

Exit status is 0 when every verdict passes, 2 when a numeric verdict
fails and 1 on configuration or I/O errors.
"""

import argparse
import logging
import os
import sys
import time

from .config import COMMANDS, ConfigError, build_config, load_config
from .experiments import run
from .records import write_record

OUT_ENV = "WIENEROU_OUT"
EXIT_OK, EXIT_IO, EXIT_FAIL = 0, 1, 2


def build_parser():
    p = argparse.ArgumentParser(prog="wienerou", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS, help="experiment to run")
    p.add_argument("--config", metavar="PATH", help="YAML config file")
    p.add_argument("--out", metavar="DIR",
                   help=f"output root (default: ${OUT_ENV}, config 'out', or ./results)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--workers", type=int, help="worker threads (never changes results)")
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    return p


def resolve_out(args_out, cfg_out):
    return args_out or os.environ.get(OUT_ENV) or cfg_out or "results"


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    overrides = {"seed": args.seed, "workers": args.workers}
    try:
        if args.config:
            cfg = load_config(args.config, overrides)
            if cfg.experiment != args.command:
                raise ConfigError("experiment", f"config is for {cfg.experiment!r}, "
                                                f"not {args.command!r}")
        else:
            cfg = build_config({"experiment": args.command}, overrides)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_IO
    start = time.perf_counter()
    try:
        record = run(cfg)
    except (ValueError, IndexError, ArithmeticError, RuntimeError) as err:
        print(f"{cfg.experiment} failed: {err}", file=sys.stderr)
        return EXIT_IO
    if args.verbose:
        print(f"{cfg.experiment}: {time.perf_counter() - start:.1f} s", file=sys.stderr)
    try:
        out = write_record(record, os.path.join(resolve_out(args.out, cfg.out), cfg.experiment))
    except OSError as err:
        print(f"cannot write results: {err}", file=sys.stderr)
        return EXIT_IO
    for m in record.metrics:
        if m.verdict != "info":
            print(f"{m.verdict.upper():4s}  {m.name} = {m.value!r}")
    print(f"{'PASS' if record.passed else 'FAIL'}  {cfg.experiment} -> {out}")
    return EXIT_OK if record.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
