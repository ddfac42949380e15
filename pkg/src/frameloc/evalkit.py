"""Evaluation metrics, Monte-Carlo random baselines, and report rendering.

Questions without a prediction always count as wrong and are reported in
the ``missing`` column, so a partial pipeline cannot inflate its score.
"""

from __future__ import annotations

import hashlib
from typing import Mapping, Sequence

import numpy as np

from .datamodel import (
    CompositeVideo,
    LocalizationLabel,
    MetricEntry,
    QAItem,
)
from .composite import segment_label

__all__ = [
    "DEFAULT_SEED",
    "qa_accuracy",
    "localization_accuracy_strict",
    "localization_accuracy_segment",
    "localization_tolerance",
    "random_qa_baseline",
    "random_localization_baseline",
    "render_report",
    "parse_report_tsv",
    "config_hash",
]

# Fixed default so unseeded baseline runs are reproducible.
DEFAULT_SEED = 7


def _entry(name: str, hits: int, total: int, missing: int) -> MetricEntry:
    value = hits / total if total > 0 else None
    return MetricEntry(name, value, hits, total, missing)


def qa_accuracy(predictions: Mapping[str, int], qa: Sequence[QAItem]) -> MetricEntry:
    """Fraction of questions whose predicted option is the correct one."""
    known = {item.question_id for item in qa}
    for qid, option in predictions.items():
        if qid not in known:
            raise ValueError(f"prediction for unknown question {qid!r}")
        if not 0 <= option <= 3:
            raise ValueError(
                f"prediction for question {qid!r} is option {option}, outside [0, 3]"
            )
    hits = 0
    missing = 0
    for item in qa:
        if item.question_id not in predictions:
            missing += 1
        elif predictions[item.question_id] == item.correct_index:
            hits += 1
    return _entry("qa_accuracy", hits, len(qa), missing)


def localization_accuracy_strict(
    predictions: Mapping[str, int], labels: Sequence[LocalizationLabel]
) -> MetricEntry:
    """Fraction of labels hit exactly by the predicted frame index."""
    known = {label.question_id for label in labels}
    for qid in predictions:
        if qid not in known:
            raise ValueError(f"prediction for unlabelled question {qid!r}")
    hits = 0
    missing = 0
    for label in labels:
        if label.question_id not in predictions:
            missing += 1
        elif predictions[label.question_id] == label.frame_index:
            hits += 1
    return _entry("localization_strict", hits, len(labels), missing)


def localization_accuracy_segment(
    predictions: Mapping[str, int],
    composites: Sequence[CompositeVideo],
    qa: Sequence[QAItem],
) -> MetricEntry:
    """Fraction of questions localized anywhere inside the right segment."""
    owners: dict[str, list[CompositeVideo]] = {}
    for c in composites:
        for seg in c.segments:
            owners.setdefault(seg.video_id, []).append(c)
    known = {item.question_id for item in qa}
    for qid in predictions:
        if qid not in known:
            raise ValueError(f"prediction for unknown question {qid!r}")
    hits = 0
    missing = 0
    for item in qa:
        found = owners.get(item.video_id, [])
        if len(found) != 1:
            raise ValueError(
                f"question {item.question_id!r}: video {item.video_id!r} belongs "
                f"to {len(found)} composites, need exactly 1"
            )
        if item.question_id not in predictions:
            missing += 1
            continue
        start, end = segment_label(found[0], item.video_id)
        if start <= predictions[item.question_id] < end:
            hits += 1
    return _entry("localization_segment", hits, len(qa), missing)


def localization_tolerance(
    predictions: Mapping[str, int],
    labels: Sequence[LocalizationLabel],
    tol: int,
) -> MetricEntry:
    """Fraction of labels hit within +-tol frames; tol 0 is the strict metric."""
    if tol < 0:
        raise ValueError(f"tol must be >= 0, got {tol}")
    known = {label.question_id for label in labels}
    for qid in predictions:
        if qid not in known:
            raise ValueError(f"prediction for unlabelled question {qid!r}")
    hits = 0
    missing = 0
    for label in labels:
        if label.question_id not in predictions:
            missing += 1
        elif abs(predictions[label.question_id] - label.frame_index) <= tol:
            hits += 1
    return _entry(f"localization_tol_{tol}", hits, len(labels), missing)


def random_qa_baseline(
    trials: int, seed: int = DEFAULT_SEED, n_options: int = 4
) -> MetricEntry:
    """Monte-Carlo accuracy of uniform random guessing over the options."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    answers = rng.integers(0, n_options, size=trials)
    guesses = rng.integers(0, n_options, size=trials)
    hits = int((answers == guesses).sum())
    return _entry("random_qa_baseline", hits, trials, 0)


def random_localization_baseline(
    trials: int, n_frames: int = 100, seed: int = DEFAULT_SEED
) -> MetricEntry:
    """Monte-Carlo strict accuracy of a uniform random frame guess."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if n_frames < 1:
        raise ValueError(f"n_frames must be >= 1, got {n_frames}")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_frames, size=trials)
    guesses = rng.integers(0, n_frames, size=trials)
    hits = int((labels == guesses).sum())
    return _entry("random_localization_baseline", hits, trials, 0)


def _percent(value: float | None) -> str:
    return "N/A" if value is None else f"{value * 100:.2f}%"


def render_report(
    entries: Sequence[MetricEntry],
    fmt: str = "text",
    provenance: str = "",
) -> str:
    """Render entries sorted by metric name, as a text table or TSV.

    The text table shows percentages with two decimals; the TSV carries the
    raw fraction at full precision so reparsing reproduces the values.
    """
    if not entries:
        raise ValueError("nothing to render: no metric entries")
    ordered = sorted(entries, key=lambda e: e.name)
    if fmt == "tsv":
        lines = ["metric\tvalue\tnumerator\tdenominator\tmissing"]
        for e in ordered:
            value = "N/A" if e.value is None else repr(e.value)
            lines.append(f"{e.name}\t{value}\t{e.numerator}\t{e.denominator}\t{e.missing}")
        return "\n".join(lines) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    width = max(len(e.name) for e in ordered)
    lines = []
    for e in ordered:
        line = f"{e.name:<{width}}  {_percent(e.value):>8}  ({e.numerator}/{e.denominator})"
        if e.missing:
            line += f"  [{e.missing} missing]"
        lines.append(line)
    if provenance:
        lines.append(f"# config {provenance}")
    return "\n".join(lines) + "\n"


def parse_report_tsv(text: str) -> list[MetricEntry]:
    """Inverse of ``render_report(..., fmt="tsv")``."""
    lines = [line for line in text.splitlines() if line]
    if not lines or lines[0].split("\t") != [
        "metric",
        "value",
        "numerator",
        "denominator",
        "missing",
    ]:
        raise ValueError("not a report TSV: bad header")
    entries = []
    for line in lines[1:]:
        name, value, num, den, missing = line.split("\t")
        entries.append(
            MetricEntry(
                name,
                None if value == "N/A" else float(value),
                int(num),
                int(den),
                int(missing),
            )
        )
    return entries


def config_hash(parts: Mapping[str, str]) -> str:
    """Short deterministic digest of a run configuration."""
    digest = hashlib.sha256()
    for key in sorted(parts):
        digest.update(f"{key}={parts[key]}\n".encode("utf-8"))
    return digest.hexdigest()[:16]
