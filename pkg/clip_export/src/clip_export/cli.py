"""Command line for the exporter."""

from __future__ import annotations

import argparse
import sys

from .encoders import make_encoder
from .export import export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clip-export",
        description="embed an image folder and class list into UMFS feature files",
    )
    parser.add_argument("--images", required=True, help="image folder; class-named "
                        "subfolders produce a labeled vision file")
    parser.add_argument("--classes", required=True,
                        help="comma-separated class names")
    parser.add_argument("--domain", required=True,
                        help="domain descriptor used in the prompt template")
    parser.add_argument("--out", required=True, help="output path prefix")
    parser.add_argument("--backend", default="tiny", choices=("tiny", "hf"))
    parser.add_argument("--model", help="checkpoint id or path for the hf backend")
    parser.add_argument("--target", action="store_true",
                        help="tag the vision file as target-domain")
    return parser


def cli_main(argv) -> int:
    args = build_parser().parse_args(list(argv))
    try:
        encoder = make_encoder(args.backend, args.model)
        manifest = export(
            args.images,
            [c for c in args.classes.split(",") if c],
            args.domain,
            args.out,
            encoder,
            target=args.target,
        )
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(manifest.to_text())
    return 0


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))
