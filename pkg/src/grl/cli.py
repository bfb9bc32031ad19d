"""Command line entry point.

Exit status: 0 when every run completes, 1 for an invalid configuration,
2 when any run faults at runtime.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from .harness.config import ALGOS, ENVS, ConfigValidationError, load_config
from .harness.runner import OUTPUT_ROOT_ENV, run

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="grl", description="Kernel-field SARSA experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiments described by a config file",
                       epilog=f"Relative output directories resolve under ${OUTPUT_ROOT_ENV} "
                              "(default: the current directory).")
    r.add_argument("--config", required=True, help="YAML run configuration")
    r.add_argument("--seed", type=int, help="run this single seed instead of the configured list")
    r.add_argument("--episodes", type=int)
    r.add_argument("--out", help="output directory")
    r.add_argument("--algo", choices=ALGOS)
    r.add_argument("--env", choices=ENVS)
    r.add_argument("--jobs", type=int, help="parallel worker processes")
    r.add_argument("-q", "--quiet", action="store_true")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"seed": args.seed, "episodes": args.episodes, "out": args.out,
                 "algo": args.algo, "env": args.env}
    try:
        cfg = load_config(args.config, overrides)
        if args.jobs is not None:
            if args.jobs < 1:
                raise ConfigValidationError(["--jobs: must be >= 1"])
            cfg.jobs = args.jobs
    except ConfigValidationError as exc:
        print(json.dumps(exc.report(), indent=2), file=sys.stderr)
        return EXIT_INVALID
    out, summary, ok = run(cfg)
    if not args.quiet:
        for algo, st in summary["stats"].items():
            print(f"{algo}: median of final-window medians {st['median_of_medians']:.2f}, "
                  f"mean {st['mean_of_means']:.2f}")
        print(f"artifacts in {out}")
    if not ok:
        for r in summary["runs"]:
            if r["error"]:
                print(f"{r['algo']} seed {r['seed']} failed: {r['error']}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
