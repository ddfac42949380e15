"""Command line for batch conversion of extractor output.

    tle-export embeddings FEATURES.npz OUT.emb
    tle-export manifest METADATA.json OUT.manifest

The .npz must hold two arrays: "ids" (strings) and "vectors" (one row per
id). The .json holds {"videos": [...], "questions": [...]} with the field
names of VideoRecord and QuestionRecord. Exit codes: 0 success, 1 bad
input, 2 usage.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence

import numpy as np

from .manifest import QuestionRecord, VideoRecord, export_manifest
from .writer import ExportError, export_embeddings


def _cmd_embeddings(args: argparse.Namespace) -> int:
    import zipfile

    try:
        bundle = np.load(args.source, allow_pickle=False)
    except (EOFError, zipfile.BadZipFile, ValueError) as exc:
        raise ExportError(f"{args.source}: not a readable .npz bundle: {exc}") from None
    with bundle:
        missing = {"ids", "vectors"} - set(bundle.files)
        if missing:
            raise ExportError(
                f"{args.source}: missing array {sorted(missing)}; "
                f"need 'ids' and 'vectors'"
            )
        ids = [str(i) for i in bundle["ids"]]
        vectors = bundle["vectors"]
    if vectors.ndim != 2:
        raise ExportError(
            f"{args.source}: 'vectors' must be 2-D, got shape {vectors.shape}"
        )
    n_bytes = export_embeddings(vectors, ids, args.out)
    print(f"wrote {len(ids)} x {vectors.shape[1]} vectors, {n_bytes} bytes, to {args.out}")
    return 0


def _record(cls, payload: dict, context: str):
    try:
        kwargs = dict(payload)
        for field in ("options", "option_embedding_ids"):
            if field in kwargs:
                kwargs[field] = tuple(kwargs[field])
        return cls(**kwargs)
    except TypeError as exc:
        raise ExportError(f"{context}: {exc}") from None


def _cmd_manifest(args: argparse.Namespace) -> int:
    with open(args.source, "r", encoding="utf-8") as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as exc:
            raise ExportError(f"{args.source}: not valid JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise ExportError(f"{args.source}: top level must be an object")
    videos = [
        _record(VideoRecord, v, f"{args.source}: videos[{i}]")
        for i, v in enumerate(payload.get("videos", []))
    ]
    questions = [
        _record(QuestionRecord, q, f"{args.source}: questions[{i}]")
        for i, q in enumerate(payload.get("questions", []))
    ]
    n_lines = export_manifest(videos, questions, args.out)
    print(
        f"wrote {len(videos)} videos, {len(questions)} questions "
        f"({n_lines} lines) to {args.out}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tle-export",
        description="Convert extractor arrays and metadata into TLE1/manifest files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embeddings", help="convert an .npz bundle to a TLE1 file")
    p.add_argument("source", help=".npz with 'ids' and 'vectors' arrays")
    p.add_argument("out")
    p.set_defaults(handler=_cmd_embeddings)

    p = sub.add_parser("manifest", help="convert a .json description to a manifest")
    p.add_argument("source", help='.json with "videos" and "questions" lists')
    p.add_argument("out")
    p.set_defaults(handler=_cmd_manifest)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.handler(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
