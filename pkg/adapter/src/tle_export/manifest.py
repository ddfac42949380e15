"""Manifest text emitter for video and question metadata.

Target grammar, one record per line, UTF-8, LF endings:

    VIDEO <video_id> <n_frames> <fps> <frame_id_prefix>
    QA <question_id> <video_id> <correct_index> <q_embed_id> <opt_id0> \
<opt_id1> <opt_id2> <opt_id3> | <question text> | <opt0> | <opt1> | <opt2> | <opt3>

Frame ids are never listed; consumers derive them as the prefix plus a
zero-padded index whose width is the decimal width of the largest index.
Records are checked against the consumer's invariants before anything is
written, so a bad record fails the export instead of producing a file
that validates red downstream.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .writer import ExportError

# Uniform sampling contract for full-length clips: every video is
# represented by this many evenly spaced frames regardless of duration.
FRAMES_PER_VIDEO = 100


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    n_frames: int
    fps: float
    frame_id_prefix: str


@dataclass(frozen=True)
class QuestionRecord:
    question_id: str
    video_id: str
    question_text: str
    options: tuple[str, ...]
    correct_index: int
    question_embedding_id: str
    option_embedding_ids: tuple[str, ...]


def frame_id_sequence(prefix: str, n_frames: int = FRAMES_PER_VIDEO) -> tuple[str, ...]:
    """Ids a consumer will derive for a video: prefix + zero-padded index."""
    if n_frames < 1:
        raise ExportError(f"n_frames must be >= 1, got {n_frames}")
    width = len(str(n_frames - 1))
    return tuple(f"{prefix}{i:0{width}d}" for i in range(n_frames))


def uniform_sample_times(
    duration_s: float, n_frames: int = FRAMES_PER_VIDEO
) -> np.ndarray:
    """Midpoint instants, in seconds, at which to grab each sampled frame.

    Midpoints keep the first and last sample off the clip boundaries,
    where decoders often return padding.
    """
    if duration_s <= 0:
        raise ExportError(f"duration must be positive, got {duration_s}")
    if n_frames < 1:
        raise ExportError(f"n_frames must be >= 1, got {n_frames}")
    return (np.arange(n_frames) + 0.5) * (duration_s / n_frames)


def _token(value: str, what: str) -> str:
    if (
        not isinstance(value, str)
        or not value
        or any(c.isspace() for c in value)
        or "|" in value
        or "," in value
    ):
        raise ExportError(
            f"{what} {value!r} cannot be serialized: ids must be non-empty "
            f"and free of whitespace, '|' and ','"
        )
    return value


def _text(value: str, what: str) -> str:
    if "|" in value or "\n" in value:
        raise ExportError(f"{what} contains '|' or a newline and cannot be serialized")
    return value


def _video_line(v: VideoRecord) -> str:
    _token(v.video_id, "video_id")
    _token(v.frame_id_prefix, f"frame id prefix of video {v.video_id!r}")
    if v.n_frames < 1:
        raise ExportError(f"video {v.video_id!r}: n_frames must be >= 1, got {v.n_frames}")
    if not v.fps > 0:
        raise ExportError(f"video {v.video_id!r}: fps must be positive, got {v.fps}")
    return f"VIDEO {v.video_id} {v.n_frames} {float(v.fps)!r} {v.frame_id_prefix}"


def _question_line(q: QuestionRecord) -> str:
    _token(q.question_id, "question_id")
    _token(q.video_id, f"video id of question {q.question_id!r}")
    _token(q.question_embedding_id, f"question embedding id of {q.question_id!r}")
    if len(q.options) != 4:
        raise ExportError(
            f"question {q.question_id!r} has {len(q.options)} options; the "
            f"format carries exactly 4"
        )
    if len(q.option_embedding_ids) != 4:
        raise ExportError(
            f"question {q.question_id!r} has {len(q.option_embedding_ids)} "
            f"option embedding ids; the format carries exactly 4"
        )
    if not 0 <= q.correct_index <= 3:
        raise ExportError(
            f"question {q.question_id!r}: correct_index {q.correct_index} "
            f"outside [0, 3]"
        )
    for oid in q.option_embedding_ids:
        _token(oid, f"option embedding id of {q.question_id!r}")
    _text(q.question_text, f"question text of {q.question_id!r}")
    for opt in q.options:
        _text(opt, f"option text of {q.question_id!r}")
    head = " ".join(
        [
            "QA",
            q.question_id,
            q.video_id,
            str(q.correct_index),
            q.question_embedding_id,
            *q.option_embedding_ids,
        ]
    )
    return " | ".join([head, q.question_text, *q.options])


def export_manifest(
    videos: Sequence[VideoRecord],
    questions: Sequence[QuestionRecord],
    out_path: str | os.PathLike,
) -> int:
    """Write VIDEO then QA records; returns the number of lines written.

    All records are checked first; nothing is written on error. Questions
    must reference videos exported in the same call, since a dangling
    video id would fail downstream validation anyway.
    """
    lines: list[str] = []
    known_videos: set[str] = set()
    for v in videos:
        if v.video_id in known_videos:
            raise ExportError(f"duplicate video id {v.video_id!r}")
        known_videos.add(v.video_id)
        lines.append(_video_line(v))
    known_questions: set[str] = set()
    for q in questions:
        if q.question_id in known_questions:
            raise ExportError(f"duplicate question id {q.question_id!r}")
        known_questions.add(q.question_id)
        if q.video_id not in known_videos:
            raise ExportError(
                f"question {q.question_id!r} references video {q.video_id!r}, "
                f"which is not part of this export"
            )
        lines.append(_question_line(q))
    with open(out_path, "w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line + "\n")
    return len(lines)
