"""CLI: `plot relchange <pf_report.json> -o fig.svg` and
`plot meanworst <summary.json>... -o fig.svg`."""

from __future__ import annotations

import argparse
import os
import sys

from .figures import plot_mean_vs_worstk, plot_relchange
from .schema import SchemaError


def _format_from(path: str, explicit: str | None) -> str:
    if explicit:
        return explicit
    ext = os.path.splitext(path)[1].lstrip(".").lower()
    return ext if ext in ("svg", "png") else "svg"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plot")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("relchange", help="per-client relative-change bars")
    p.add_argument("report")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--format", choices=("svg", "png"), default=None)

    p = sub.add_parser("meanworst", help="mean vs worst-k% scatter")
    p.add_argument("summaries", nargs="+")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--format", choices=("svg", "png"), default=None)
    p.add_argument("--k", default=None, help="worst-k%% key to plot (default: smallest)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    fmt = _format_from(args.out, args.format)
    try:
        if args.command == "relchange":
            plot_relchange(args.report, args.out, fmt)
        else:
            plot_mean_vs_worstk(args.summaries, args.out, fmt, k=args.k)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
