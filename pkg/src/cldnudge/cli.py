"""Command line entry point: ``cldnudge {kernel,simulate,estimate,diagnose}``."""
from __future__ import annotations

import argparse
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

from .config import load_config
from .exceptions import ConfigurationError, NumericalAbort

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="scenario JSON file or bundled preset name (default: table1)")
    common.add_argument("--out", default=argparse.SUPPRESS,
                        help="output directory (default: output_dir from the config)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="thread count hint for the linear algebra backend")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="cldnudge", parents=[common],
                                     description="Two-shape PSD reconstruction from CLD records.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("kernel", parents=[common], help="tabulate the chord kernels")
    sub.add_parser("simulate", parents=[common], help="simulate truth PSDs and the CLD record")
    p_est = sub.add_parser("estimate", parents=[common], help="run back-and-forth nudging")
    p_est.add_argument("--record", help="record CSV (default: <out>/record.csv)")
    sub.add_parser("diagnose", parents=[common], help="observability diagnostics")
    return parser


def _threads(n):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    config_path = getattr(args, "config", "table1")
    verbose = getattr(args, "verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import scenario

    try:
        cfg = load_config(config_path)
        out = Path(getattr(args, "out", None) or cfg.output_dir)
        with _threads(getattr(args, "threads", None)):
            if args.command == "kernel":
                for p in scenario.write_kernels(cfg, out):
                    print(p)
            elif args.command == "simulate":
                res = scenario.simulate(cfg, out)
                print(f"output_energy: {res['energy']:.17g}")
                print(f"record: {out / scenario.RECORD_FILE}")
            elif args.command == "estimate":
                res = scenario.estimate(cfg, out, args.record)
                for w in res["warnings"]:
                    print(w, file=sys.stderr)
                print((out / scenario.ESTIMATE_DIR / "report.txt").read_text(), end="")
            elif args.command == "diagnose":
                res = scenario.diagnose(cfg, out)
                print("\n".join(res["lines"]))
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
