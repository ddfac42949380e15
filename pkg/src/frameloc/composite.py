"""Composite videos: splicing, coordinate mapping, and median-frame labels.

A composite lays whole source videos end to end. Each source video's span
in the composite is free ground truth for localization, and the span's
lower-median frame serves as an approximate most-influential-frame label.
"""

from __future__ import annotations

import random
from bisect import bisect_right
from typing import Sequence

from .datamodel import (
    CompositeVideo,
    LocalizationLabel,
    QAItem,
    Segment,
    VideoManifest,
)

__all__ = [
    "build_composite",
    "global_to_local",
    "local_to_global",
    "segment_label",
    "median_frame_label",
    "generate_median_labels",
    "group_videos",
    "build_composites",
]


def build_composite(composite_id: str, videos: Sequence[VideoManifest]) -> CompositeVideo:
    """Splice whole videos end to end, in the given order."""
    if len(videos) < 2:
        raise ValueError(f"a composite needs at least 2 videos, got {len(videos)}")
    seen: set[str] = set()
    segments: list[Segment] = []
    cursor = 0
    for m in videos:
        if m.video_id in seen:
            raise ValueError(f"video {m.video_id!r} appears twice in composite {composite_id!r}")
        seen.add(m.video_id)
        if m.n_frames < 1:
            raise ValueError(f"video {m.video_id!r} has no frames")
        segments.append(Segment(m.video_id, cursor, m.n_frames))
        cursor += m.n_frames
    return CompositeVideo(composite_id, tuple(segments), cursor)


def global_to_local(c: CompositeVideo, g: int) -> tuple[str, int]:
    """Map a global frame index to (video_id, local frame index)."""
    if not 0 <= g < c.total_frames:
        raise IndexError(
            f"global frame {g} outside [0, {c.total_frames}) of composite {c.composite_id!r}"
        )
    starts = [seg.start_global for seg in c.segments]
    seg = c.segments[bisect_right(starts, g) - 1]
    return seg.video_id, g - seg.start_global


def local_to_global(c: CompositeVideo, video_id: str, local: int) -> int:
    """Map (video_id, local frame index) back to the global index."""
    for seg in c.segments:
        if seg.video_id == video_id:
            if not 0 <= local < seg.n_frames:
                raise IndexError(
                    f"local frame {local} outside [0, {seg.n_frames}) of video {video_id!r}"
                )
            return seg.start_global + local
    raise ValueError(f"video {video_id!r} is not part of composite {c.composite_id!r}")


def segment_label(c: CompositeVideo, question_video_id: str) -> tuple[int, int]:
    """Half-open global span [start, end) of the named video's segment."""
    for seg in c.segments:
        if seg.video_id == question_video_id:
            return seg.start_global, seg.end_global
    raise ValueError(
        f"video {question_video_id!r} is not part of composite {c.composite_id!r}"
    )


def median_frame_label(span: tuple[int, int]) -> int:
    """Lower-median frame index of a half-open span."""
    start, end = span
    if end <= start:
        raise ValueError(f"empty span [{start}, {end})")
    return start + (end - start - 1) // 2


def generate_median_labels(
    composites: Sequence[CompositeVideo], qa: Sequence[QAItem]
) -> list[LocalizationLabel]:
    """One median-frame label per question, in global composite coordinates.

    Every question's video must belong to exactly one composite; the label
    depends only on that video's segment, so questions on the same video get
    identical labels.
    """
    owners: dict[str, list[CompositeVideo]] = {}
    for c in composites:
        for seg in c.segments:
            owners.setdefault(seg.video_id, []).append(c)
    labels: list[LocalizationLabel] = []
    for item in qa:
        found = owners.get(item.video_id, [])
        if len(found) != 1:
            raise ValueError(
                f"question {item.question_id!r}: video {item.video_id!r} belongs to "
                f"{len(found)} composites, need exactly 1"
            )
        span = segment_label(found[0], item.video_id)
        labels.append(LocalizationLabel(item.question_id, median_frame_label(span)))
    return labels


def group_videos(
    manifests: Sequence[VideoManifest], group_size: int = 3, seed: int = 0
) -> list[list[VideoManifest]]:
    """Deterministically shuffle videos and chunk them into splice groups.

    A trailing single video is folded into the previous group, since a
    composite needs at least two.
    """
    if group_size < 2:
        raise ValueError(f"group_size must be >= 2, got {group_size}")
    if len(manifests) < 2:
        raise ValueError(f"need at least 2 videos to form composites, got {len(manifests)}")
    order = list(manifests)
    random.Random(seed).shuffle(order)
    groups = [order[i : i + group_size] for i in range(0, len(order), group_size)]
    if len(groups) > 1 and len(groups[-1]) == 1:
        groups[-2].extend(groups.pop())
    return groups


def build_composites(
    manifests: Sequence[VideoManifest],
    group_size: int = 3,
    seed: int = 0,
    id_prefix: str = "c",
) -> list[CompositeVideo]:
    """Group all videos and build one composite per group, ids c0, c1, ..."""
    groups = group_videos(manifests, group_size=group_size, seed=seed)
    return [
        build_composite(f"{id_prefix}{i}", group) for i, group in enumerate(groups)
    ]
