"""Command-line entry point: ``convbss {run, verify-identities, summarize}``.

Exit codes: 0 success, 1 failed identity check, 2 invalid configuration or
malformed input.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .bench import load_config, read_results, run_experiment, summarize, write_summary
from .errors import ConfigError, FormatError
from .identities import verify_identities


def _cmd_run(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    results = run_experiment(config, args.out, jobs=args.jobs, seed_offset=args.seed_offset)
    failed = [r for r in results if any(f.startswith("failed") for f in r.flags)]
    for r in failed:
        print(f"warning: {r.run_id} failed: {r.reason}", file=sys.stderr)
    print(f"{len(results)} runs written to {args.out}/results.csv ({len(failed)} warnings)")
    return 0


def _cmd_verify(args) -> int:
    results = verify_identities(trials=args.trials, seed=args.seed, tol_scale=args.tol_scale)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        line = f"{status}  {r.name:<{width}}  trials={r.trials:<4d} max_dev={r.max_deviation:.3e}"
        if args.tol_report:
            line += f"  tol={r.tolerance:.1e}  time={r.seconds:.2f}s"
        print(line)
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} identities passed")
    return 1 if n_fail else 0


def _cmd_summarize(args) -> int:
    try:
        rows = read_results(args.results)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    summary = summarize(rows)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_summary(summary, fh)
    else:
        write_summary(summary, sys.stdout)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convbss", description="Convolutive blind source separation benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate scenes, separate and score them")
    run.add_argument("config", help="INI experiment file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    run.add_argument("--seed-offset", type=int, default=0, help="added to every configured seed")
    run.set_defaults(func=_cmd_run)

    ver = sub.add_parser("verify-identities", help="check the structural identities on random instances")
    ver.add_argument("--trials", type=int, default=None, help="instances per identity")
    ver.add_argument("--tol-report", action="store_true", help="also print tolerances and timings")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--tol-scale", type=float, default=1.0, help=argparse.SUPPRESS)
    ver.set_defaults(func=_cmd_verify)

    summ = sub.add_parser("summarize", help="five-number summaries of results.csv")
    summ.add_argument("results", help="results.csv from a run")
    summ.add_argument("--out", help="write summary CSV here instead of stdout")
    summ.set_defaults(func=_cmd_summarize)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
