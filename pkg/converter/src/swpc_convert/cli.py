"""Command-line entry point: one subject-session conversion per invocation.

    swpc-convert --dataset MI1 --subject 1 --session 1 --out containers/

Conversion failures (excluded subject, metadata mismatch, download trouble)
exit with status 2 and a one-line reason on stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys

from swpc_convert.convert import CACHE_ENV, ConversionError, convert
from swpc_convert.datasets import REGISTRY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swpc-convert",
        description="convert a BNCI-Horizon subject session to an SWPC container",
    )
    parser.add_argument("--dataset", required=True, choices=sorted(REGISTRY))
    parser.add_argument("--subject", required=True, type=int)
    parser.add_argument("--session", required=True, type=int, choices=(1, 2))
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument(
        "--cache",
        default=None,
        help=f"dataset cache directory (default: ${CACHE_ENV} or ~/.cache/swpc-bnci)",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        result = convert(
            args.dataset, args.subject, args.session, args.out, args.cache
        )
    except ConversionError as exc:
        print(f"swpc-convert: {exc}", file=sys.stderr)
        return 2
    print(
        f"wrote {result.out_path} ({result.n_events} events, "
        f"{result.n_channels} ch @ {result.fs:g} Hz, "
        f"{result.n_samples} samples)"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
