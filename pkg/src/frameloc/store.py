"""Persistence: TLE1 binary embedding files and line-oriented text manifests.

The binary format is the interchange contract with external exporters and is
bit-exact: little-endian throughout, header then values then id records.

    offset 0   magic   4 bytes, ASCII "TLE1"
    offset 4   version u32, currently 1
    offset 8   dim     u32, > 0
    offset 12  count   u64
    offset 20  count * dim float32 values, row-major
    then       count id records: u16 byte length + UTF-8 bytes

Manifests are UTF-8 text, one record per line, LF endings, ``#`` comments:

    VIDEO <video_id> <n_frames> <fps> <frame_id_prefix>
    QA <question_id> <video_id> <correct_index> <q_embed_id> <opt_id0> \
<opt_id1> <opt_id2> <opt_id3> | <question text> | <opt0> | <opt1> | <opt2> | <opt3>
    LABEL <question_id> <frame_index>
    COMPOSITE <composite_id> <video_id,...>

Frame ids are not listed explicitly: they are the prefix plus a zero-padded
index (pad width = decimal width of the largest index).
"""

from __future__ import annotations

import json
import os
import struct
from typing import NamedTuple, Sequence

import numpy as np

from .datamodel import (
    CompositeVideo,
    Corpus,
    EmbeddingMatrix,
    LocalizationLabel,
    Projector,
    QAItem,
    Segment,
    VideoManifest,
    Violation,
    make_frame_ids,
)

__all__ = [
    "TLE_MAGIC",
    "TLE_VERSION",
    "TLEFormatError",
    "ManifestError",
    "CorpusValidationError",
    "ManifestSet",
    "write_embeddings",
    "read_embeddings",
    "read_manifest_set",
    "write_manifest_set",
    "load_corpus",
    "read_predictions",
    "write_predictions",
    "save_projector",
    "load_projector",
]

TLE_MAGIC = b"TLE1"
TLE_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")  # magic, version, dim, count
_MAX_ID_BYTES = 0xFFFF


class TLEFormatError(ValueError):
    """Raised for malformed or corrupt binary embedding files."""


class ManifestError(ValueError):
    """Raised for malformed manifest text; messages carry the line number."""


class CorpusValidationError(ValueError):
    """Raised when a loaded corpus fails validation."""

    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        lines = "\n".join(
            f"  [{v.code}] {v.subject}: {v.detail}" for v in self.violations
        )
        super().__init__(f"{len(self.violations)} corpus violations:\n{lines}")


def write_embeddings(matrix: EmbeddingMatrix, path: str | os.PathLike) -> int:
    """Write the matrix in TLE1 format; returns the byte count written."""
    id_blobs: list[bytes] = []
    for embedding_id in matrix.ids:
        blob = embedding_id.encode("utf-8")
        if len(blob) > _MAX_ID_BYTES:
            raise ValueError(
                f"embedding id {embedding_id[:32]!r}... is {len(blob)} bytes; "
                f"limit is {_MAX_ID_BYTES}"
            )
        id_blobs.append(blob)

    written = 0
    with open(path, "wb") as f:
        written += f.write(_HEADER.pack(TLE_MAGIC, TLE_VERSION, matrix.dim, matrix.count))
        written += f.write(matrix.values.astype("<f4", copy=False).tobytes())
        for blob in id_blobs:
            written += f.write(struct.pack("<H", len(blob)))
            written += f.write(blob)
    return written


def read_embeddings(path: str | os.PathLike) -> EmbeddingMatrix:
    """Read a TLE1 file; exact inverse of :func:`write_embeddings`."""
    file_size = os.path.getsize(path)
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise TLEFormatError(f"{path}: truncated header ({len(header)} bytes)")
        magic, version, dim, count = _HEADER.unpack(header)
        if magic != TLE_MAGIC:
            raise TLEFormatError(f"{path}: bad magic {magic!r}")
        if version != TLE_VERSION:
            raise TLEFormatError(f"{path}: unsupported version {version}")
        if dim < 1:
            raise TLEFormatError(f"{path}: dim must be positive, got {dim}")
        # Bounds-check the declared payload against the file size before
        # allocating anything sized by the header.
        payload = count * dim * 4
        if _HEADER.size + payload > file_size:
            raise TLEFormatError(
                f"{path}: truncated: header declares {count} x {dim} values "
                f"({payload} bytes) but file holds {file_size - _HEADER.size}"
            )
        values = np.fromfile(f, dtype="<f4", count=count * dim)
        if values.size != count * dim:
            raise TLEFormatError(f"{path}: truncated value payload")
        ids: list[str] = []
        for _ in range(count):
            raw_len = f.read(2)
            if len(raw_len) < 2:
                raise TLEFormatError(f"{path}: truncated id records")
            (id_len,) = struct.unpack("<H", raw_len)
            blob = f.read(id_len)
            if len(blob) < id_len:
                raise TLEFormatError(f"{path}: truncated id records")
            ids.append(blob.decode("utf-8"))
        if f.read(1):
            raise TLEFormatError(f"{path}: trailing bytes after id records")
    try:
        return EmbeddingMatrix(tuple(ids), values.reshape(count, dim))
    except ValueError as exc:
        raise TLEFormatError(f"{path}: {exc}") from exc


class ManifestSet(NamedTuple):
    """All records parsed from one manifest file."""

    manifests: tuple[VideoManifest, ...]
    qa: tuple[QAItem, ...]
    labels: tuple[LocalizationLabel, ...]
    composites: tuple[CompositeVideo, ...]


_QA_FIELDS = (
    "question_id",
    "video_id",
    "correct_index",
    "question_embedding_id",
    "option_embedding_id_0",
    "option_embedding_id_1",
    "option_embedding_id_2",
    "option_embedding_id_3",
)


def _parse_int(token: str, what: str, line_no: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise ManifestError(f"line {line_no}: {what} must be an integer, got {token!r}") from None


def _parse_video(tokens: list[str], line_no: int) -> VideoManifest:
    if len(tokens) != 5:
        raise ManifestError(
            f"line {line_no}: VIDEO record needs 4 fields "
            f"(video_id n_frames fps frame_id_prefix), got {len(tokens) - 1}"
        )
    _, video_id, n_frames_tok, fps_tok, prefix = tokens
    n_frames = _parse_int(n_frames_tok, "n_frames", line_no)
    try:
        fps = float(fps_tok)
    except ValueError:
        raise ManifestError(f"line {line_no}: fps must be a number, got {fps_tok!r}") from None
    frame_ids = make_frame_ids(prefix, n_frames) if n_frames >= 1 else ()
    return VideoManifest(video_id, n_frames, fps, frame_ids)


def _parse_qa(line: str, line_no: int) -> QAItem:
    parts = line.split("|")
    tokens = parts[0].split()
    if len(tokens) < 1 + len(_QA_FIELDS):
        have = len(tokens) - 1
        qid = tokens[1] if len(tokens) > 1 else "<unknown>"
        raise ManifestError(
            f"line {line_no}: QA {qid}: missing field {_QA_FIELDS[have]!r}"
        )
    if len(tokens) > 1 + len(_QA_FIELDS):
        raise ManifestError(
            f"line {line_no}: QA record has {len(tokens) - 1} fields before text, "
            f"expected {len(_QA_FIELDS)}"
        )
    if len(parts) != 6:
        qid = tokens[1]
        raise ManifestError(
            f"line {line_no}: QA {qid}: expected question text and 4 options "
            f"separated by '|', got {len(parts) - 1} text fields"
        )
    _, qid, vid, ci_tok, q_embed = tokens[:5]
    correct_index = _parse_int(ci_tok, f"QA {qid}: correct_index", line_no)
    texts = [p.strip() for p in parts[1:]]
    return QAItem(
        question_id=qid,
        video_id=vid,
        question_text=texts[0],
        options=tuple(texts[1:5]),
        correct_index=correct_index,
        question_embedding_id=q_embed,
        option_embedding_ids=tuple(tokens[5:9]),
    )


def _parse_label(tokens: list[str], line_no: int) -> LocalizationLabel:
    if len(tokens) != 3:
        raise ManifestError(
            f"line {line_no}: LABEL record needs 2 fields "
            f"(question_id frame_index), got {len(tokens) - 1}"
        )
    return LocalizationLabel(tokens[1], _parse_int(tokens[2], "frame_index", line_no))


def read_manifest_set(path: str | os.PathLike) -> ManifestSet:
    """Parse a manifest file. Syntax errors report the line number.

    Parsing is independent of record order; composites are resolved against
    the VIDEO records of the same file. Semantic problems (dangling
    references, bad counts) are left to ``validate_corpus``.
    """
    manifests: list[VideoManifest] = []
    qa: list[QAItem] = []
    labels: list[LocalizationLabel] = []
    raw_composites: list[tuple[int, str, list[str]]] = []

    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            tag = line.split(None, 1)[0]
            if tag == "VIDEO":
                manifests.append(_parse_video(line.split(), line_no))
            elif tag == "QA":
                qa.append(_parse_qa(line, line_no))
            elif tag == "LABEL":
                labels.append(_parse_label(line.split(), line_no))
            elif tag == "COMPOSITE":
                tokens = line.split()
                if len(tokens) != 3:
                    raise ManifestError(
                        f"line {line_no}: COMPOSITE record needs 2 fields "
                        f"(composite_id video_id,...), got {len(tokens) - 1}"
                    )
                video_ids = tokens[2].split(",")
                if any(not v for v in video_ids):
                    raise ManifestError(f"line {line_no}: empty video id in COMPOSITE list")
                raw_composites.append((line_no, tokens[1], video_ids))
            else:
                raise ManifestError(f"line {line_no}: unknown record type {tag!r}")

    n_frames_of = {m.video_id: m.n_frames for m in manifests}
    composites: list[CompositeVideo] = []
    for line_no, composite_id, video_ids in raw_composites:
        segments: list[Segment] = []
        cursor = 0
        for vid in video_ids:
            if vid not in n_frames_of:
                raise ManifestError(
                    f"line {line_no}: COMPOSITE {composite_id} references video "
                    f"{vid!r} with no VIDEO record"
                )
            segments.append(Segment(vid, cursor, n_frames_of[vid]))
            cursor += n_frames_of[vid]
        composites.append(CompositeVideo(composite_id, tuple(segments), cursor))

    return ManifestSet(tuple(manifests), tuple(qa), tuple(labels), tuple(composites))


def _check_token(value: str, what: str) -> str:
    if not value or any(c.isspace() for c in value) or "|" in value or "," in value:
        raise ManifestError(
            f"{what} {value!r} cannot be serialized: ids must be non-empty "
            f"and free of whitespace, '|' and ','"
        )
    return value


def _check_text(value: str, what: str) -> str:
    if "|" in value or "\n" in value:
        raise ManifestError(f"{what} contains '|' or a newline and cannot be serialized")
    return value


def _video_line(m: VideoManifest) -> str:
    _check_token(m.video_id, "video_id")
    if m.n_frames != len(m.frame_ids) or m.n_frames < 1:
        raise ManifestError(
            f"video {m.video_id!r}: n_frames {m.n_frames} inconsistent with "
            f"{len(m.frame_ids)} frame ids"
        )
    width = len(str(m.n_frames - 1))
    prefix = m.frame_ids[0][: len(m.frame_ids[0]) - width]
    if make_frame_ids(prefix, m.n_frames) != m.frame_ids:
        raise ManifestError(
            f"video {m.video_id!r}: frame ids do not follow "
            f"<prefix><zero-padded index> and cannot be serialized"
        )
    _check_token(prefix, f"frame id prefix of video {m.video_id!r}")
    return f"VIDEO {m.video_id} {m.n_frames} {m.fps!r} {prefix}"


def _qa_line(item: QAItem) -> str:
    _check_token(item.question_id, "question_id")
    _check_token(item.video_id, "video_id")
    _check_token(item.question_embedding_id, "question_embedding_id")
    if len(item.options) != 4 or len(item.option_embedding_ids) != 4:
        raise ManifestError(
            f"question {item.question_id!r}: the QA record format carries exactly "
            f"4 options and 4 option embedding ids"
        )
    for oid in item.option_embedding_ids:
        _check_token(oid, f"option embedding id of {item.question_id!r}")
    _check_text(item.question_text, f"question text of {item.question_id!r}")
    for opt in item.options:
        _check_text(opt, f"option text of {item.question_id!r}")
    head = " ".join(
        [
            "QA",
            item.question_id,
            item.video_id,
            str(item.correct_index),
            item.question_embedding_id,
            *item.option_embedding_ids,
        ]
    )
    return " | ".join([head, item.question_text, *item.options])


def write_manifest_set(ms: ManifestSet, path: str | os.PathLike) -> None:
    """Write records in the manifest grammar; inverse of the reader."""
    lines: list[str] = []
    for m in ms.manifests:
        lines.append(_video_line(m))
    for item in ms.qa:
        lines.append(_qa_line(item))
    for label in ms.labels:
        _check_token(label.question_id, "question_id")
        lines.append(f"LABEL {label.question_id} {label.frame_index}")
    for c in ms.composites:
        _check_token(c.composite_id, "composite_id")
        for seg in c.segments:
            _check_token(seg.video_id, "video_id")
        lines.append(f"COMPOSITE {c.composite_id} {','.join(c.video_ids())}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line + "\n")


def read_predictions(path: str | os.PathLike) -> dict[str, int]:
    """Read per-question integer predictions.

    One ``PRED <question_id> <value>`` record per line, in the manifest
    grammar (LF, ``#`` comments, blank lines skipped). The value is an
    answer option index or a frame index depending on what the file holds;
    range checks belong to the metric that consumes it.
    """
    predictions: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if tokens[0] != "PRED":
                raise ManifestError(
                    f"line {line_no}: unknown record type {tokens[0]!r}, expected PRED"
                )
            if len(tokens) != 3:
                raise ManifestError(
                    f"line {line_no}: PRED record needs 2 fields "
                    f"(question_id value), got {len(tokens) - 1}"
                )
            _, qid, value_tok = tokens
            if qid in predictions:
                raise ManifestError(f"line {line_no}: duplicate prediction for {qid!r}")
            predictions[qid] = _parse_int(value_tok, f"prediction for {qid}", line_no)
    return predictions


def write_predictions(predictions: dict[str, int], path: str | os.PathLike) -> None:
    """Write ``PRED`` records sorted by question id; inverse of the reader."""
    for qid in predictions:
        _check_token(qid, "question_id")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for qid in sorted(predictions):
            f.write(f"PRED {qid} {int(predictions[qid])}\n")


def save_projector(p: Projector, path: str | os.PathLike) -> None:
    """Write a projector as JSON; floats keep full round-trip precision."""
    payload = {
        "d_in": p.d_in,
        "d_out": p.d_out,
        "weights": [[float(x) for x in row] for row in p.weights],
        "bias": [float(x) for x in p.bias],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=1)
        f.write("\n")


def load_projector(path: str | os.PathLike) -> Projector:
    """Read a projector written by :func:`save_projector`."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON: {exc}") from exc
    try:
        weights = np.asarray(payload["weights"], dtype=np.float64)
        bias = np.asarray(payload["bias"], dtype=np.float64)
        d_in, d_out = int(payload["d_in"]), int(payload["d_out"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: malformed projector file: {exc}") from exc
    if weights.ndim != 2 or weights.shape != (d_out, d_in) or bias.shape != (d_out,):
        raise ValueError(
            f"{path}: projector declares d_in={d_in} d_out={d_out} but carries "
            f"weights {weights.shape} and bias {bias.shape}"
        )
    return Projector(weights, bias)


def load_corpus(
    manifest_path: str | os.PathLike,
    embeddings_path: str | os.PathLike,
    require_valid: bool = True,
) -> Corpus:
    """Read manifest plus embeddings and validate the assembled corpus.

    With ``require_valid`` (the default) a non-empty validation report raises
    :class:`CorpusValidationError`; downstream operations can then assume
    every precondition that validation covers.
    """
    ms = read_manifest_set(manifest_path)
    embeddings = read_embeddings(embeddings_path)
    corpus = Corpus(ms.manifests, ms.qa, ms.labels, ms.composites, embeddings)
    if require_valid:
        violations = corpus.validate()
        if violations:
            raise CorpusValidationError(violations)
    return corpus
