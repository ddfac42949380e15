"""Shared domain types and corpus validation.

Every other module consumes these types. Record types (videos, questions,
labels, composites) are deliberately permissive at construction time so that
malformed data can be represented and reported by :func:`validate_corpus`;
array-backed types (embeddings, score tables, projectors) enforce their
structural invariants immediately because downstream math depends on them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "EmbeddingMatrix",
    "VideoManifest",
    "QAItem",
    "LocalizationLabel",
    "Segment",
    "CompositeVideo",
    "RelevanceMatrix",
    "Projector",
    "InfluenceProfile",
    "MetricEntry",
    "EvalReport",
    "Violation",
    "Corpus",
    "make_frame_ids",
    "validate_corpus",
]


def make_frame_ids(prefix: str, n_frames: int) -> tuple[str, ...]:
    """Frame ids for a uniformly sampled video: prefix plus zero-padded index.

    The pad width is the decimal width of the largest index, so 100 frames
    with prefix ``"v0:f"`` yields ``v0:f00 .. v0:f99``.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    width = len(str(n_frames - 1))
    return tuple(f"{prefix}{i:0{width}d}" for i in range(n_frames))


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Dense row-major store of float32 vectors keyed by unique string ids.

    One matrix may mix frame, question and option vectors; role is assigned
    by whatever references a row, not by the matrix itself.
    """

    ids: tuple[str, ...]
    values: np.ndarray  # (count, dim) float32, read-only after construction

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise ValueError(f"values must be 2-D, got shape {values.shape}")
        if values.shape[1] < 1:
            raise ValueError("vector dimensionality must be positive")
        ids = tuple(self.ids)
        if len(ids) != values.shape[0]:
            raise ValueError(
                f"{len(ids)} ids for {values.shape[0]} rows"
            )
        if len(set(ids)) != len(ids):
            seen: set[str] = set()
            for i in ids:
                if i in seen:
                    raise ValueError(f"duplicate embedding id {i!r}")
                seen.add(i)
        if values.size and not np.all(np.isfinite(values)):
            bad = int(np.argwhere(~np.isfinite(values).all(axis=1))[0][0])
            raise ValueError(f"non-finite entries in vector {ids[bad]!r}")
        values = np.ascontiguousarray(values)
        values.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_index", {i: r for r, i in enumerate(ids)})

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __contains__(self, embedding_id: str) -> bool:
        return embedding_id in self._index  # type: ignore[attr-defined]

    def index_of(self, embedding_id: str) -> int:
        try:
            return self._index[embedding_id]  # type: ignore[attr-defined]
        except KeyError:
            raise KeyError(f"unknown embedding id {embedding_id!r}") from None

    def row(self, embedding_id: str) -> np.ndarray:
        return self.values[self.index_of(embedding_id)]

    def select(self, ids: Sequence[str]) -> "EmbeddingMatrix":
        """New matrix holding the given rows, in the given order."""
        rows = [self.index_of(i) for i in ids]
        return EmbeddingMatrix(tuple(ids), self.values[rows])

    @classmethod
    def empty(cls, dim: int) -> "EmbeddingMatrix":
        return cls((), np.empty((0, dim), dtype=np.float32))


@dataclass(frozen=True)
class VideoManifest:
    """One source video: its id, uniform-sampling frame count and frame ids."""

    video_id: str
    n_frames: int
    fps: float
    frame_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "frame_ids", tuple(self.frame_ids))

    def timestamp(self, frame_index: int) -> float:
        """Derived timestamp in seconds; frames are uniformly sampled."""
        return frame_index / self.fps


@dataclass(frozen=True)
class QAItem:
    """A four-option multiple-choice question about one video."""

    question_id: str
    video_id: str
    question_text: str
    options: tuple[str, ...]
    correct_index: int
    question_embedding_id: str
    option_embedding_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "options", tuple(self.options))
        object.__setattr__(
            self, "option_embedding_ids", tuple(self.option_embedding_ids)
        )


@dataclass(frozen=True)
class LocalizationLabel:
    """Ground-truth frame index for a question.

    The index is into the question's video, or into the composite containing
    that video when the corpus defines composites.
    """

    question_id: str
    frame_index: int


@dataclass(frozen=True)
class Segment:
    """One source video's span inside a composite, in global frame indices."""

    video_id: str
    start_global: int
    n_frames: int

    @property
    def end_global(self) -> int:
        """Exclusive end of the span."""
        return self.start_global + self.n_frames


@dataclass(frozen=True)
class CompositeVideo:
    """Whole source videos spliced end to end; segments tile [0, total_frames)."""

    composite_id: str
    segments: tuple[Segment, ...]
    total_frames: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "segments", tuple(self.segments))

    def video_ids(self) -> tuple[str, ...]:
        return tuple(s.video_id for s in self.segments)


@dataclass(frozen=True, eq=False)
class RelevanceMatrix:
    """n_frames x n_questions table of frame-question similarity scores."""

    frame_ids: tuple[str, ...]
    question_ids: tuple[str, ...]
    scores: np.ndarray  # (n_frames, n_questions) float64 in [-1, 1]

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64)
        frame_ids = tuple(self.frame_ids)
        question_ids = tuple(self.question_ids)
        if scores.shape != (len(frame_ids), len(question_ids)):
            raise ValueError(
                f"scores shape {scores.shape} inconsistent with "
                f"{len(frame_ids)} frames x {len(question_ids)} questions"
            )
        if scores.size and (np.min(scores) < -1.0 or np.max(scores) > 1.0):
            raise ValueError("scores must lie in [-1, 1]")
        scores = np.ascontiguousarray(scores)
        scores.setflags(write=False)
        object.__setattr__(self, "frame_ids", frame_ids)
        object.__setattr__(self, "question_ids", question_ids)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(
            self, "_qindex", {q: j for j, q in enumerate(question_ids)}
        )

    def question_index(self, question_id: str) -> int:
        try:
            return self._qindex[question_id]  # type: ignore[attr-defined]
        except KeyError:
            raise KeyError(f"unknown question id {question_id!r}") from None

    def column(self, question_id: str) -> np.ndarray:
        return self.scores[:, self.question_index(question_id)]


@dataclass(frozen=True, eq=False)
class Projector:
    """Linear map from visual-feature space to token space: h = W z + b."""

    weights: np.ndarray  # (d_out, d_in) float64
    bias: np.ndarray  # (d_out,) float64

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=np.float64)
        bias = np.asarray(self.bias, dtype=np.float64)
        if weights.ndim != 2 or weights.shape[0] < 1 or weights.shape[1] < 1:
            raise ValueError(f"weights must be 2-D and non-empty, got {weights.shape}")
        if bias.shape != (weights.shape[0],):
            raise ValueError(
                f"bias shape {bias.shape} does not match d_out {weights.shape[0]}"
            )
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
            raise ValueError("projector entries must be finite")
        weights = np.ascontiguousarray(weights)
        weights.setflags(write=False)
        bias = np.ascontiguousarray(bias)
        bias.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)

    @property
    def d_in(self) -> int:
        return self.weights.shape[1]

    @property
    def d_out(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class InfluenceProfile:
    """Per-frame influence estimates for one question."""

    question_id: str
    influences: tuple[float, ...]
    predicted_key_frame: int

    def __post_init__(self) -> None:
        influences = tuple(float(v) for v in self.influences)
        object.__setattr__(self, "influences", influences)
        if influences:
            best = max(influences)
            expected = influences.index(best)
            if self.predicted_key_frame != expected:
                raise ValueError(
                    f"predicted_key_frame {self.predicted_key_frame} is not the "
                    f"first argmax ({expected})"
                )


@dataclass(frozen=True)
class MetricEntry:
    """One evaluation metric: a fraction plus its integer counts.

    ``value`` is None when the metric is undefined for the input (for
    example an entirely missing prediction set); it renders as N/A.
    ``missing`` counts questions that had no prediction and were scored
    as wrong.
    """

    name: str
    value: float | None
    numerator: int
    denominator: int
    missing: int = 0

    def __post_init__(self) -> None:
        if self.value is not None:
            if not 0.0 <= self.value <= 1.0:
                raise ValueError(f"metric value {self.value} outside [0, 1]")
            if self.numerator > self.denominator:
                raise ValueError("numerator exceeds denominator")
            if self.denominator > 0 and not math.isclose(
                self.value, self.numerator / self.denominator, abs_tol=1e-12
            ):
                raise ValueError("value does not equal numerator/denominator")


@dataclass(frozen=True)
class EvalReport:
    """A set of metric entries plus a provenance hash of the run config."""

    entries: tuple[MetricEntry, ...]
    provenance: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))


@dataclass(frozen=True)
class Violation:
    """One corpus-consistency failure, keyed by the offending record's id."""

    code: str
    subject: str
    detail: str


@dataclass(frozen=True, eq=False)
class Corpus:
    """Everything one evaluation run needs: records plus their embeddings."""

    manifests: tuple[VideoManifest, ...]
    qa: tuple[QAItem, ...]
    labels: tuple[LocalizationLabel, ...]
    composites: tuple[CompositeVideo, ...]
    embeddings: EmbeddingMatrix

    def __post_init__(self) -> None:
        object.__setattr__(self, "manifests", tuple(self.manifests))
        object.__setattr__(self, "qa", tuple(self.qa))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "composites", tuple(self.composites))
        object.__setattr__(
            self, "_videos", {m.video_id: m for m in self.manifests}
        )
        owners: dict[str, list[CompositeVideo]] = {}
        for c in self.composites:
            for seg in c.segments:
                owners.setdefault(seg.video_id, []).append(c)
        object.__setattr__(self, "_composite_of", owners)

    def validate(self) -> list[Violation]:
        return validate_corpus(
            self.manifests, self.embeddings, self.qa, self.labels, self.composites
        )

    def video(self, video_id: str) -> VideoManifest:
        try:
            return self._videos[video_id]  # type: ignore[attr-defined]
        except KeyError:
            raise KeyError(f"unknown video id {video_id!r}") from None

    def composite_containing(self, video_id: str) -> CompositeVideo | None:
        """The unique composite splicing this video, if any."""
        owners = self._composite_of.get(video_id, [])  # type: ignore[attr-defined]
        if not owners:
            return None
        if len(owners) > 1:
            raise ValueError(
                f"video {video_id!r} appears in {len(owners)} composites"
            )
        return owners[0]

    def frame_sequence_for(self, item: QAItem) -> tuple[str, ...]:
        """Frame ids a localization prediction for this question indexes into.

        When the question's video belongs to a composite, that is the
        composite's full global frame sequence; otherwise the video's own
        frames.
        """
        composite = self.composite_containing(item.video_id)
        if composite is None:
            return self.video(item.video_id).frame_ids
        ids: list[str] = []
        for seg in composite.segments:
            ids.extend(self.video(seg.video_id).frame_ids)
        return tuple(ids)


def _check_videos(
    manifests: Sequence[VideoManifest],
    embeddings: EmbeddingMatrix,
    norms: np.ndarray,
    out: list[Violation],
) -> dict[str, VideoManifest]:
    by_id: dict[str, VideoManifest] = {}
    frame_owner: dict[str, str] = {}
    for m in manifests:
        if m.video_id in by_id:
            out.append(Violation("video.duplicate_id", m.video_id, "duplicate video_id"))
            continue
        by_id[m.video_id] = m
        if m.n_frames < 1:
            out.append(Violation("video.n_frames", m.video_id, f"n_frames = {m.n_frames} is not positive"))
        if not m.fps > 0:
            out.append(Violation("video.fps", m.video_id, f"fps = {m.fps} is not positive"))
        if m.n_frames != len(m.frame_ids):
            out.append(
                Violation(
                    "video.frame_count_mismatch",
                    m.video_id,
                    f"n_frames = {m.n_frames} but {len(m.frame_ids)} frame_ids",
                )
            )
        for fid in m.frame_ids:
            owner = frame_owner.get(fid)
            if owner is not None:
                out.append(
                    Violation(
                        "video.duplicate_frame_id",
                        m.video_id,
                        f"frame id {fid!r} already used by video {owner!r}",
                    )
                )
                continue
            frame_owner[fid] = m.video_id
            _check_vector(fid, f"frame of video {m.video_id!r}", embeddings, norms, out)
    return by_id


def _check_vector(
    embedding_id: str,
    role: str,
    embeddings: EmbeddingMatrix,
    norms: np.ndarray,
    out: list[Violation],
) -> None:
    if embedding_id not in embeddings:
        out.append(
            Violation("embedding.unresolved", embedding_id, f"{role}: id not in embedding matrix")
        )
    elif norms[embeddings.index_of(embedding_id)] == 0.0:
        out.append(
            Violation("embedding.zero_norm", embedding_id, f"{role}: vector has zero norm")
        )


def _check_qa(
    qa: Sequence[QAItem],
    videos: dict[str, VideoManifest],
    embeddings: EmbeddingMatrix,
    norms: np.ndarray,
    out: list[Violation],
) -> dict[str, QAItem]:
    by_id: dict[str, QAItem] = {}
    for item in qa:
        if item.question_id in by_id:
            out.append(Violation("qa.duplicate_id", item.question_id, "duplicate question_id"))
            continue
        by_id[item.question_id] = item
        if len(item.options) != 4:
            out.append(
                Violation(
                    "qa.options_count",
                    item.question_id,
                    f"options.count != 4 (got {len(item.options)})",
                )
            )
        if not 0 <= item.correct_index <= 3:
            out.append(
                Violation(
                    "qa.correct_index",
                    item.question_id,
                    f"correct_index = {item.correct_index} outside [0, 3]",
                )
            )
        if item.video_id not in videos:
            out.append(
                Violation("qa.unresolved_video", item.question_id, f"video {item.video_id!r} not in corpus")
            )
        _check_vector(
            item.question_embedding_id, f"question {item.question_id!r}", embeddings, norms, out
        )
        if len(item.option_embedding_ids) != 4:
            out.append(
                Violation(
                    "qa.option_embedding_count",
                    item.question_id,
                    f"expected 4 option embedding ids, got {len(item.option_embedding_ids)}",
                )
            )
        for oid in item.option_embedding_ids:
            _check_vector(oid, f"option of question {item.question_id!r}", embeddings, norms, out)
    return by_id


def _check_composites(
    composites: Sequence[CompositeVideo],
    videos: dict[str, VideoManifest],
    out: list[Violation],
) -> dict[str, CompositeVideo]:
    membership: dict[str, str] = {}
    by_id: dict[str, CompositeVideo] = {}
    for c in composites:
        if c.composite_id in by_id:
            out.append(Violation("composite.duplicate_id", c.composite_id, "duplicate composite_id"))
            continue
        by_id[c.composite_id] = c
        if len(c.segments) < 2:
            out.append(
                Violation("composite.too_few_videos", c.composite_id, f"{len(c.segments)} segments, need >= 2")
            )
        seen: set[str] = set()
        cursor = 0
        tiled = True
        for seg in c.segments:
            if seg.video_id in seen:
                out.append(
                    Violation("composite.duplicate_video", c.composite_id, f"video {seg.video_id!r} spliced twice")
                )
            seen.add(seg.video_id)
            if seg.start_global != cursor or seg.n_frames < 1:
                tiled = False
            cursor += seg.n_frames
            manifest = videos.get(seg.video_id)
            if manifest is None:
                out.append(
                    Violation("composite.unresolved_video", c.composite_id, f"video {seg.video_id!r} not in corpus")
                )
            elif seg.n_frames != manifest.n_frames:
                out.append(
                    Violation(
                        "composite.segment_length",
                        c.composite_id,
                        f"segment for {seg.video_id!r} has {seg.n_frames} frames, video has {manifest.n_frames}",
                    )
                )
            prior = membership.get(seg.video_id)
            if prior is not None and prior != c.composite_id:
                out.append(
                    Violation(
                        "composite.video_in_multiple",
                        seg.video_id,
                        f"video appears in composites {prior!r} and {c.composite_id!r}",
                    )
                )
            membership[seg.video_id] = c.composite_id
        if not tiled or cursor != c.total_frames:
            out.append(
                Violation(
                    "composite.not_tiled",
                    c.composite_id,
                    f"segments do not tile [0, {c.total_frames}) exactly",
                )
            )
    return by_id


def validate_corpus(
    manifests: Sequence[VideoManifest],
    embeddings: EmbeddingMatrix,
    qa: Sequence[QAItem],
    labels: Sequence[LocalizationLabel],
    composites: Sequence[CompositeVideo] = (),
) -> list[Violation]:
    """Check every cross-reference and record invariant; report, never raise.

    Returns an empty list iff the corpus is consistent. The report is sorted,
    so it is independent of input list order, and re-validating a corpus
    yields the identical report.
    """
    out: list[Violation] = []
    if embeddings.count:
        norms = np.linalg.norm(embeddings.values.astype(np.float64), axis=1)
    else:
        norms = np.zeros(0)

    videos = _check_videos(manifests, embeddings, norms, out)
    questions = _check_qa(qa, videos, embeddings, norms, out)
    comps = _check_composites(composites, videos, out)

    composite_of: dict[str, list[str]] = {}
    for c in comps.values():
        for seg in c.segments:
            composite_of.setdefault(seg.video_id, []).append(c.composite_id)

    labelled: set[str] = set()
    for label in labels:
        item = questions.get(label.question_id)
        if item is None:
            out.append(
                Violation("label.unresolved_question", label.question_id, "label for unknown question")
            )
            continue
        if label.question_id in labelled:
            out.append(Violation("label.duplicate", label.question_id, "more than one label for question"))
            continue
        labelled.add(label.question_id)
        owners = composite_of.get(item.video_id, [])
        if len(owners) == 1:
            limit = comps[owners[0]].total_frames
            space = f"composite {owners[0]!r}"
        elif not owners:
            manifest = videos.get(item.video_id)
            if manifest is None:
                continue  # already reported as qa.unresolved_video
            limit = manifest.n_frames
            space = f"video {item.video_id!r}"
        else:
            continue  # ambiguous membership already reported
        if not 0 <= label.frame_index < limit:
            out.append(
                Violation(
                    "label.out_of_range",
                    label.question_id,
                    f"label out of range: frame_index {label.frame_index} not in [0, {limit}) of {space}",
                )
            )

    out.sort(key=lambda v: (v.code, v.subject, v.detail))
    return out
