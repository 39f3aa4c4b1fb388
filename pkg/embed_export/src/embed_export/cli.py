"""Command-line front end: read a class list, write a TMKD-EMB v1 file.

Exit codes match the primary pipeline convention: 0 success, 2 input or
contract error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .exporter import (
    DEFAULT_TEMPLATES,
    ExportError,
    ExportJob,
    ModelUnavailableError,
    export,
)


def read_class_list(path: Path) -> list[str]:
    names = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
    return [n for n in names if n]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="embed-export",
        description="export view-specific prompt embeddings to a TMKD-EMB v1 file",
    )
    p.add_argument("--classes", required=True, help="newline-delimited UTF-8 class list")
    p.add_argument("--output", required=True, help="destination .bin file")
    p.add_argument("--mode", choices=("model", "pseudo"), default="pseudo")
    p.add_argument("--seed", type=int, default=0, help="pseudo-mode hash seed")
    p.add_argument("--dim", type=int, default=64, help="pseudo-mode embedding dimension")
    p.add_argument("--rgb-template", default=DEFAULT_TEMPLATES["rgb"])
    p.add_argument("--edge-template", default=DEFAULT_TEMPLATES["edge"])
    p.add_argument("--hf-template", default=DEFAULT_TEMPLATES["hf"])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    classes_path = Path(args.classes)
    if not classes_path.is_file():
        print(f"error: class list {classes_path} does not exist", file=sys.stderr)
        return 2
    try:
        job = ExportJob(
            class_names=read_class_list(classes_path),
            output_path=args.output,
            mode=args.mode,
            pseudo_seed=args.seed,
            pseudo_dim=args.dim,
            templates={
                "rgb": args.rgb_template,
                "edge": args.edge_template,
                "hf": args.hf_template,
            },
        )
        count = export(job)
    except (ExportError, ModelUnavailableError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"wrote {count} records to {args.output}")
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
