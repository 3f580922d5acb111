"""cgbc-encode: turn prompt strings or image files into embedding containers.

    cgbc-encode texts  --model <id> --in <file> --out <container>
    cgbc-encode images --model <id> --in <file> --out <container>

The input file holds one entry per line, or a JSON array of strings when it
ends in .json. Exit codes: 0 success, 1 usage errors, 2 model, input, or
data errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from cgbc.store import Role

from .backend import EncodeError
from .jobs import DEFAULT_BATCH, EncodeJob, encode_images, encode_texts


def read_input_list(path) -> list:
    p = Path(path)
    if not p.is_file():
        raise EncodeError(f"input file missing: {p}")
    if p.suffix == ".json":
        data = json.loads(p.read_text(encoding="utf-8"))
        if not isinstance(data, list) or not all(isinstance(x, str) for x in data):
            raise EncodeError(f"{p} must hold a JSON array of strings")
        return data
    return [line for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cgbc-encode",
        description="encode texts or images into embedding container files",
    )
    sub = parser.add_subparsers(dest="command")
    for name, default_role, entry in (
        ("texts", Role.PROMPT, "prompt strings"),
        ("images", Role.IMAGE, "image paths"),
    ):
        cmd = sub.add_parser(name, help=f"encode {entry} into a container")
        cmd.add_argument("--model", required=True, help="checkpoint id or local path")
        cmd.add_argument(
            "--in",
            dest="in_path",
            required=True,
            help=f"file of {entry}: one per line, or a JSON array for .json",
        )
        cmd.add_argument("--out", required=True, help="container manifest path")
        cmd.add_argument("--batch", type=int, default=DEFAULT_BATCH)
        cmd.add_argument(
            "--role",
            choices=[r.value for r in Role],
            default=default_role.value,
            help=f"role tag for the rows (default {default_role.value})",
        )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1

    try:
        job = EncodeJob(
            model_id=args.model,
            inputs=read_input_list(args.in_path),
            output=args.out,
            batch=args.batch,
        )
        run = encode_texts if args.command == "texts" else encode_images
        manifest = run(job, role=Role(args.role))
        meta = json.loads(manifest.read_text(encoding="utf-8"))
    except (EncodeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    print(f"wrote {manifest} ({meta['count']} rows, dim {meta['dim']})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
