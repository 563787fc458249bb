"""Command line: plotkit <kind> --in <csv> [--in2 <csv>] --out <img> [--analytic]"""

from __future__ import annotations

import argparse
import sys

from .render import KINDS, FigureSpec, HeaderMismatch, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plotkit",
        description="Render figures from immunepd CSV files")
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--in", dest="input", required=True,
                        help="input CSV (episode CSV, or train CSV for cost)")
    parser.add_argument("--in2", dest="input2",
                        help="second episode CSV (compare kind)")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--analytic", action="store_true",
                        help="overlay the critically damped error solution "
                             "seeded from the first row (error kind)")
    parser.add_argument("--xlabel", default="")
    parser.add_argument("--ylabel", default="")
    args = parser.parse_args(argv)

    inputs = (args.input,) if args.input2 is None else (args.input, args.input2)
    try:
        spec = FigureSpec(kind=args.kind, inputs=inputs, output=args.out,
                          xlabel=args.xlabel, ylabel=args.ylabel,
                          analytic=args.analytic)
        path = render(spec)
    except (ValueError, FileNotFoundError, HeaderMismatch) as exc:
        print(f"plotkit: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
