"""Command line entry point: ``quantile-alloc {run,fit,validate}``."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings

from .exceptions import QuantileAllocError
from .harness import fit_scaling, run_scenario, validate_scenario


def _run(args):
    results = run_scenario(args.scenario, args.out, seed=args.seed, workers=args.workers,
                           solver_trace=args.solver_trace)
    for name, rows in results.items():
        print(f"{name}: {len(rows)} summary rows written")
    return 0


def _fit(args):
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        fits = fit_scaling(args.summary, benchmark_kind=args.benchmark)
    print("policy,exponent,r2,points")
    for pol, fit in fits.items():
        print(f"{pol},{fit.exponent:.4f},{fit.r2:.4f},{fit.T.size}")
        if pol.startswith("full"):
            ratios = " ".join(f"{v:.4g}" for v in fit.polylog_ratio)
            print(f"  regret/(ln T)^3: {ratios}")
    return 0


def _validate(args):
    for line in validate_scenario(args.scenario):
        print(line)
    print("ok")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="quantile-alloc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write CSV results")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=None, help="override the scenario's master seed")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--solver-trace", action="store_true",
                   help="dump (iteration, lambda, dual value) of each benchmark solve")
    r.set_defaults(func=_run)

    f = sub.add_parser("fit", help="fit regret ~ T^b from a summary CSV")
    f.add_argument("--summary", required=True)
    f.add_argument("--benchmark", default="fluid")
    f.set_defaults(func=_fit)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("--scenario", required=True)
    v.set_defaults(func=_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (QuantileAllocError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
