"""Command line: fracpoh run|sweep|check."""

import argparse
import os
import sys
from dataclasses import asdict

from threadpoolctl import threadpool_limits

from . import config, io, runner
from .errors import FracpohError, ValidationError

EXIT_OK, EXIT_FAIL, EXIT_INVALID = 0, 1, 2


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("FRACPOH_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"FRACPOH_THREADS must be a positive integer, got {env!r}",
                                  field="FRACPOH_THREADS", module="cli_io") from None
        if n < 1:
            raise ValidationError("FRACPOH_THREADS must be a positive integer", field="FRACPOH_THREADS",
                                  module="cli_io")
        return n
    return None


def _positive_int(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def build_parser():
    ap = argparse.ArgumentParser(prog="fracpoh", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", help="directory for CSV, JSON and solution files")
    common.add_argument("--threads", type=_positive_int, help="BLAS threads (fallback: FRACPOH_THREADS)")
    common.add_argument("--seed", type=int, help="seed for randomized probe sampling")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run a config"), ("sweep", "run a config with a sweep block")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("config", help="config file, or the name of a bundled config")
    p = sub.add_parser("check", parents=[common], help="run checks on a saved solution")
    p.add_argument("solution", help="solution file written by run or sweep")
    p.add_argument("--check", action="append", required=True, choices=config.CHECKS, dest="checks")
    p.add_argument("--tol", type=float, help="override the check tolerance")
    return ap


def _print_rows(rows, out):
    out.write(io.csv_bytes([asdict(r) for r in rows], runner.CSV_COLUMNS).decode("utf-8"))


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        threads = _threads(args.threads)
        with threadpool_limits(limits=threads):
            if args.command == "check":
                rows = runner.check_solution(args.solution, args.checks, args.tol)
                if args.out_dir:
                    path = os.path.join(args.out_dir, "check.csv")
                    io.atomic_write(path, io.csv_bytes([asdict(r) for r in rows], runner.CSV_COLUMNS))
                _print_rows(rows, sys.stdout)
                return EXIT_OK if all(r.passed for r in rows) else EXIT_FAIL
            cfg = config.load_config(args.config)
            fn = runner.sweep if args.command == "sweep" else runner.run
            res = fn(cfg, out_dir=args.out_dir, seed=args.seed)
    except ValidationError as exc:
        print(f"fracpoh: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FracpohError, OSError) as exc:
        print(f"fracpoh: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    _print_rows(res.rows, sys.stdout)
    for name, entry in res.summary.items():
        if "observed_order" in entry:
            print(f"# {name}: observed order {entry['observed_order']:.3g}")
    for key in ("csv", "json"):
        if key in res.paths:
            print(f"# wrote {res.paths[key]}")
    failed = [r.check for r in res.rows if not r.passed]
    if failed:
        print(f"# failed checks: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
