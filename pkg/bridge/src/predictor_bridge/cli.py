"""Command line entry point: serve one model over stdio or a TCP port."""

from __future__ import annotations

import argparse
import sys

from .models import ModelLoadError, load_model
from .server import serve_stdio, serve_tcp


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="predictor-bridge",
        description="Serve a model over the line-oriented prediction protocol.",
    )
    parser.add_argument("model", help="weight file (.json) or Python source (.py) to serve")
    parser.add_argument(
        "transport",
        help="TCP port number (0 picks a free one), or 'stdio' to serve the standard streams",
    )
    parser.add_argument("--delimiter", default=",", help="field delimiter inside data rows (default ,)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if len(args.delimiter) != 1:
        print("delimiter must be one character", file=sys.stderr)
        return 1
    try:
        model = load_model(args.model)
    except ModelLoadError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    if args.transport == "stdio":
        serve_stdio(model, args.delimiter)
        return 0
    if args.transport.isdigit() and int(args.transport) <= 65535:
        serve_tcp(model, int(args.transport), args.delimiter)
        return 0
    print(f"transport must be a port number or 'stdio', got {args.transport!r}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
