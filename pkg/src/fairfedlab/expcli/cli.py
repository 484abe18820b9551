"""Command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 config validation failure,
3 runtime domain error.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import ConfigError, DimensionError, DomainError, ExhaustionError, SingularError
from . import runner
from .verify import run_verify

_RUNTIME_ERRORS = (DomainError, SingularError, DimensionError, ExhaustionError, FileNotFoundError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairfedlab")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help="output directory override")
    common.add_argument("--seed-index", type=int, default=None, help="run only this seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run an experiment config")
    p.add_argument("config")

    p = sub.add_parser("finetune", parents=[common], help="run warm-started from a checkpoint")
    p.add_argument("config")
    p.add_argument("--init", required=True, help="checkpoint .json to start from")

    p = sub.add_parser("pf-compare", parents=[common], help="relative-change report of two runs")
    p.add_argument("dir_base")
    p.add_argument("dir_other")

    p = sub.add_parser("bounds", parents=[common], help="theorem constants and step bounds")
    p.add_argument("config")

    p = sub.add_parser("verify", parents=[common], help="run the invariant suites")
    p.add_argument("--inject-fault", default=None, help="force-fail the named suite")

    p = sub.add_parser("partition-stats", parents=[common], help="label-skew statistics")
    p.add_argument("config")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            out = runner.cmd_run(args.config, out=args.out, seed_index=args.seed_index)
            print(f"wrote {out.summary_path}")
        elif args.command == "finetune":
            out = runner.cmd_finetune(
                args.config, args.init, out=args.out, seed_index=args.seed_index
            )
            print(f"wrote {out.summary_path}")
        elif args.command == "pf-compare":
            print(f"wrote {runner.cmd_pf_compare(args.dir_base, args.dir_other, out=args.out)}")
        elif args.command == "bounds":
            print(f"wrote {runner.cmd_bounds(args.config, out=args.out)}")
        elif args.command == "partition-stats":
            print(f"wrote {runner.cmd_partition_stats(args.config, out=args.out)}")
        elif args.command == "verify":
            failures = run_verify(inject_fault=args.inject_fault)
            if failures:
                print("FAILED: " + ", ".join(failures), file=sys.stderr)
                return 1
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
