"""Leave-frame-out influence estimation over a pluggable answer scorer.

A scorer maps (frames, question, 4 options) to 4 scores; it stands in for
whatever model actually answers the question. Influence of a frame is the
drop in the correct answer's margin when that frame is withheld, so a frame
that props up a distractor registers as influential too. The bundled
surrogate scorer (mean-pooled frame/option cosine) keeps the whole pipeline
runnable without any model; an external process speaking a line protocol can
replace it. All runners here are serial, so scorers need not be thread-safe.
"""

from __future__ import annotations

import shlex
import subprocess
import threading
from dataclasses import dataclass
from queue import Empty, Queue
from typing import Callable, Sequence

import numpy as np

from .datamodel import Corpus, EmbeddingMatrix, InfluenceProfile, QAItem
from .relevance import cosine

__all__ = [
    "ScoreRequest",
    "AnswerScorer",
    "ScorerError",
    "surrogate_scorer",
    "ExternalScorer",
    "leave_frame_out",
    "batch_influence",
    "BatchInfluenceResult",
]


class ScorerError(RuntimeError):
    """A scorer failed to produce four finite scores."""


@dataclass(frozen=True)
class ScoreRequest:
    """One scoring call: a frame subset plus the question and its options.

    Vectors serve embedding-based scorers such as the surrogate; ids serve
    external scorers that hold their own view of the data.
    """

    question_id: str
    frame_ids: tuple[str, ...]
    frame_vectors: np.ndarray  # (n, dim)
    question_vector: np.ndarray  # (dim,)
    option_ids: tuple[str, ...]
    option_vectors: np.ndarray  # (4, dim)


AnswerScorer = Callable[[ScoreRequest], np.ndarray]


def surrogate_scorer(request: ScoreRequest) -> np.ndarray:
    """Score options by cosine against the mean-pooled frame vector.

    A zero-norm mean (fully cancelling frames) scores every option 0.
    """
    if len(request.frame_ids) == 0:
        raise ValueError("cannot score an empty frame set")
    pooled = request.frame_vectors.astype(np.float64).mean(axis=0)
    if np.linalg.norm(pooled) == 0.0:
        return np.zeros(len(request.option_ids))
    return np.array([cosine(pooled, opt) for opt in request.option_vectors])


class ExternalScorer:
    """Adapter to a child-process scorer speaking a line protocol.

    Request, one line on the child's stdin:

        <question_id> <frame_id,...> <option_id,option_id,option_id,option_id>

    Response, one line on the child's stdout: four decimal scores separated
    by whitespace. A timeout, child exit, or non-numeric response is a
    scorer failure. The child is started lazily and reused across calls; once
    it has exited it stays failed, because a write into the dead pipe can
    still succeed briefly and would otherwise hang until the timeout.
    """

    def __init__(self, command: str | Sequence[str], timeout: float = 30.0):
        self._argv = shlex.split(command) if isinstance(command, str) else list(command)
        self._timeout = timeout
        self._proc: subprocess.Popen[str] | None = None
        self._lines: Queue[str | None] = Queue()
        self._eof = False

    def _start(self) -> None:
        self._eof = False
        self._proc = subprocess.Popen(
            self._argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
        )

        def pump(stream, queue: Queue[str | None]) -> None:
            for line in stream:
                queue.put(line)
            queue.put(None)

        threading.Thread(
            target=pump, args=(self._proc.stdout, self._lines), daemon=True
        ).start()

    def __call__(self, request: ScoreRequest) -> np.ndarray:
        if self._proc is None:
            self._start()
        if self._eof:
            raise ScorerError("scorer process is gone: exited earlier")
        assert self._proc is not None and self._proc.stdin is not None
        line = " ".join(
            (
                request.question_id,
                ",".join(request.frame_ids),
                ",".join(request.option_ids),
            )
        )
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ScorerError(f"scorer process is gone: {exc}") from exc
        try:
            response = self._lines.get(timeout=self._timeout)
        except Empty:
            raise ScorerError(
                f"scorer timed out after {self._timeout}s on question "
                f"{request.question_id!r}"
            ) from None
        if response is None:
            self._eof = True
            raise ScorerError("scorer process exited before responding")
        fields = response.split()
        if len(fields) != 4:
            raise ScorerError(
                f"scorer returned {len(fields)} fields, expected 4: {response!r}"
            )
        try:
            return np.array([float(f) for f in fields])
        except ValueError:
            raise ScorerError(f"non-numeric scorer response: {response!r}") from None

    def close(self) -> None:
        if self._proc is not None:
            if self._proc.stdin is not None:
                try:
                    self._proc.stdin.close()
                except OSError:
                    pass
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
            self._proc = None

    def __enter__(self) -> "ExternalScorer":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def _checked_scores(scorer: AnswerScorer, request: ScoreRequest, context: str) -> np.ndarray:
    try:
        scores = np.asarray(scorer(request), dtype=np.float64)
    except Exception as exc:
        raise ScorerError(
            f"scorer failed on question {request.question_id!r} ({context}): {exc}"
        ) from exc
    if scores.shape != (4,) or not np.all(np.isfinite(scores)):
        raise ScorerError(
            f"scorer returned invalid scores on question {request.question_id!r} "
            f"({context}): {scores!r}"
        )
    return scores


def _margin(scores: np.ndarray, correct_index: int) -> float:
    incorrect = np.delete(scores, correct_index)
    return float(scores[correct_index] - incorrect.max())


def leave_frame_out(
    scorer: AnswerScorer,
    frame_ids: Sequence[str],
    qa_item: QAItem,
    embeddings: EmbeddingMatrix,
) -> InfluenceProfile:
    """Influence of each frame: margin with all frames minus margin without it.

    The margin is the correct option's score minus the best incorrect score.
    A single-frame video scores against a baseline margin of 0 instead of an
    (undefined) empty frame set, so the scorer runs once there and n + 1
    times otherwise. The predicted key frame is the first argmax.
    """
    frame_ids = tuple(frame_ids)
    if not frame_ids:
        raise ValueError(f"question {qa_item.question_id!r}: no frames to ablate")
    if len(qa_item.option_embedding_ids) != 4:
        raise ValueError(
            f"question {qa_item.question_id!r} needs 4 option embeddings, "
            f"got {len(qa_item.option_embedding_ids)}"
        )
    frames = embeddings.select(frame_ids).values
    question_vec = embeddings.row(qa_item.question_embedding_id)
    options = embeddings.select(qa_item.option_embedding_ids).values

    def request(ids: tuple[str, ...], vectors: np.ndarray) -> ScoreRequest:
        return ScoreRequest(
            question_id=qa_item.question_id,
            frame_ids=ids,
            frame_vectors=vectors,
            question_vector=question_vec,
            option_ids=qa_item.option_embedding_ids,
            option_vectors=options,
        )

    full = _margin(
        _checked_scores(scorer, request(frame_ids, frames), "full frame set"),
        qa_item.correct_index,
    )
    if len(frame_ids) == 1:
        influences = [full - 0.0]
    else:
        influences = []
        for i in range(len(frame_ids)):
            held_out = _margin(
                _checked_scores(
                    scorer,
                    request(
                        frame_ids[:i] + frame_ids[i + 1 :],
                        np.delete(frames, i, axis=0),
                    ),
                    f"leaving out frame {i}",
                ),
                qa_item.correct_index,
            )
            influences.append(full - held_out)
    predicted = int(np.argmax(influences))
    return InfluenceProfile(qa_item.question_id, tuple(influences), predicted)


@dataclass(frozen=True)
class BatchInfluenceResult:
    """Profiles in QA order for the items that scored, plus per-item failures."""

    profiles: tuple[InfluenceProfile, ...]
    failures: tuple[tuple[str, str], ...]  # (question_id, message)


def batch_influence(scorer: AnswerScorer, corpus: Corpus) -> BatchInfluenceResult:
    """Run leave-frame-out for every question of a validated corpus.

    Each question ablates the frame sequence its predictions index into: the
    composite's global sequence when its video is spliced into one, else the
    video's own frames. Item failures are collected, not fatal.
    """
    profiles: list[InfluenceProfile] = []
    failures: list[tuple[str, str]] = []
    for item in corpus.qa:
        try:
            frame_ids = corpus.frame_sequence_for(item)
            profiles.append(leave_frame_out(scorer, frame_ids, item, corpus.embeddings))
        except Exception as exc:
            failures.append((item.question_id, str(exc)))
    return BatchInfluenceResult(tuple(profiles), tuple(failures))
