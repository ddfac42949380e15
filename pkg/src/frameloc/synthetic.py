"""Deterministic synthetic corpora for tests and demos.

The planted construction gives every question one frame whose vector equals
the correct option's vector while all other frames are orthogonal to every
option of that question, so both top-1 localization and leave-frame-out
influence have a provably unique right answer. Generation re-verifies the
plant by exhaustive scan before returning.
"""

from __future__ import annotations

import numpy as np

from .datamodel import (
    Corpus,
    EmbeddingMatrix,
    LocalizationLabel,
    QAItem,
    VideoManifest,
    make_frame_ids,
)

__all__ = ["planted_corpus", "random_corpus"]


def _assemble(
    manifests: list[VideoManifest],
    qa: list[QAItem],
    labels: list[LocalizationLabel],
    ids: list[str],
    vectors: list[np.ndarray],
) -> Corpus:
    embeddings = EmbeddingMatrix(tuple(ids), np.stack(vectors).astype(np.float32))
    corpus = Corpus(tuple(manifests), tuple(qa), tuple(labels), (), embeddings)
    violations = corpus.validate()
    if violations:
        raise RuntimeError(f"synthetic corpus failed validation: {violations[:3]}")
    return corpus


def _question_texts(video_id: str, j: int) -> tuple[str, tuple[str, str, str, str]]:
    question = f"synthetic query {j} about video {video_id}"
    options = tuple(f"choice {k} for query {j} of {video_id}" for k in range(4))
    return question, options  # type: ignore[return-value]


def planted_corpus(
    n_videos: int = 10,
    frames_per_video: int = 10,
    questions_per_video: int = 1,
    dim: int = 32,
    seed: int = 0,
    fps: float = 10.0,
) -> Corpus:
    """Corpus where each question's key frame is planted and verifiable.

    Per video, a random orthonormal basis supplies 4 option directions per
    question plus one direction per distractor frame. Each question's
    planted frame and its own embedding both equal the correct option
    vector, so cosine against the question is 1 at the plant and ~0
    elsewhere. Labels point at the planted frames.
    """
    if questions_per_video > frames_per_video:
        raise ValueError("need at least one frame per question to plant")
    budget = 4 * questions_per_video + (frames_per_video - questions_per_video)
    if budget > dim:
        raise ValueError(
            f"dim {dim} too small: planting {questions_per_video} questions over "
            f"{frames_per_video} frames needs dim >= {budget}"
        )
    rng = np.random.default_rng(seed)
    manifests: list[VideoManifest] = []
    qa: list[QAItem] = []
    labels: list[LocalizationLabel] = []
    ids: list[str] = []
    vectors: list[np.ndarray] = []

    for v in range(n_videos):
        video_id = f"v{v}"
        frame_ids = make_frame_ids(f"{video_id}:f", frames_per_video)
        manifests.append(VideoManifest(video_id, frames_per_video, fps, frame_ids))

        basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        next_col = 0
        planted = rng.choice(frames_per_video, size=questions_per_video, replace=False)
        frame_vectors: list[np.ndarray | None] = [None] * frames_per_video

        for j in range(questions_per_video):
            qid = f"{video_id}:q{j}"
            option_vecs = [basis[:, next_col + k] for k in range(4)]
            next_col += 4
            correct = int(rng.integers(0, 4))
            frame_vectors[int(planted[j])] = option_vecs[correct]

            question_text, option_texts = _question_texts(video_id, j)
            option_ids = tuple(f"{qid}:o{k}" for k in range(4))
            qa.append(
                QAItem(
                    question_id=qid,
                    video_id=video_id,
                    question_text=question_text,
                    options=option_texts,
                    correct_index=correct,
                    question_embedding_id=f"{qid}:e",
                    option_embedding_ids=option_ids,
                )
            )
            labels.append(LocalizationLabel(qid, int(planted[j])))
            ids.append(f"{qid}:e")
            vectors.append(option_vecs[correct])
            for k in range(4):
                ids.append(option_ids[k])
                vectors.append(option_vecs[k])

        for i in range(frames_per_video):
            if frame_vectors[i] is None:
                frame_vectors[i] = basis[:, next_col]
                next_col += 1
            ids.append(frame_ids[i])
            vectors.append(frame_vectors[i])  # type: ignore[arg-type]

        # Exhaustive scan: the planted frame must be the unique cosine argmax
        # for its question, even after the float32 round trip.
        frame_block = np.stack(frame_vectors).astype(np.float32).astype(np.float64)  # type: ignore[arg-type]
        frame_block /= np.linalg.norm(frame_block, axis=1)[:, None]
        first_entry = len(vectors) - frames_per_video - 5 * questions_per_video
        question_block = np.stack(
            [vectors[first_entry + 5 * j] for j in range(questions_per_video)]
        ).astype(np.float32).astype(np.float64)
        question_block /= np.linalg.norm(question_block, axis=1)[:, None]
        sims = frame_block @ question_block.T
        for j, item in enumerate(qa[-questions_per_video:]):
            order = np.argsort(sims[:, j])[::-1]
            if int(order[0]) != int(planted[j]) or sims[order[0], j] - sims[order[1], j] < 1e-3:
                raise RuntimeError(
                    f"planted frame for {item.question_id} is not the unique argmax"
                )

    return _assemble(manifests, qa, labels, ids, vectors)


def random_corpus(
    n_videos: int = 10,
    frames_per_video: int = 100,
    questions_per_video: int = 2,
    dim: int = 64,
    seed: int = 0,
    fps: float = 10.0,
) -> Corpus:
    """Corpus of uniformly random unit vectors with random frame labels."""
    rng = np.random.default_rng(seed)

    def unit() -> np.ndarray:
        v = rng.normal(size=dim)
        return v / np.linalg.norm(v)

    manifests: list[VideoManifest] = []
    qa: list[QAItem] = []
    labels: list[LocalizationLabel] = []
    ids: list[str] = []
    vectors: list[np.ndarray] = []

    for v in range(n_videos):
        video_id = f"v{v}"
        frame_ids = make_frame_ids(f"{video_id}:f", frames_per_video)
        manifests.append(VideoManifest(video_id, frames_per_video, fps, frame_ids))
        for fid in frame_ids:
            ids.append(fid)
            vectors.append(unit())
        for j in range(questions_per_video):
            qid = f"{video_id}:q{j}"
            question_text, option_texts = _question_texts(video_id, j)
            option_ids = tuple(f"{qid}:o{k}" for k in range(4))
            qa.append(
                QAItem(
                    question_id=qid,
                    video_id=video_id,
                    question_text=question_text,
                    options=option_texts,
                    correct_index=int(rng.integers(0, 4)),
                    question_embedding_id=f"{qid}:e",
                    option_embedding_ids=option_ids,
                )
            )
            labels.append(LocalizationLabel(qid, int(rng.integers(0, frames_per_video))))
            ids.append(f"{qid}:e")
            vectors.append(unit())
            for oid in option_ids:
                ids.append(oid)
                vectors.append(unit())

    return _assemble(manifests, qa, labels, ids, vectors)
