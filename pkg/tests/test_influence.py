from __future__ import annotations

import shlex
import sys

import numpy as np
import pytest

from frameloc.datamodel import EmbeddingMatrix, QAItem
from frameloc.influence import (
    ExternalScorer,
    ScoreRequest,
    ScorerError,
    batch_influence,
    leave_frame_out,
    surrogate_scorer,
)
from frameloc.relevance import cosine


def request_of(frames, options, question=None) -> ScoreRequest:
    frames = np.asarray(frames, dtype=np.float64)
    options = np.asarray(options, dtype=np.float64)
    if question is None:
        question = np.ones(frames.shape[1])
    return ScoreRequest(
        question_id="q",
        frame_ids=tuple(f"f{i}" for i in range(len(frames))),
        frame_vectors=frames,
        question_vector=np.asarray(question, dtype=np.float64),
        option_ids=tuple(f"o{k}" for k in range(len(options))),
        option_vectors=options,
    )


def embeddings_from(pairs) -> EmbeddingMatrix:
    ids, rows = zip(*pairs)
    return EmbeddingMatrix(tuple(ids), np.asarray(rows, dtype=np.float32))


def qa_item(qid="q0", video_id="v0") -> QAItem:
    return QAItem(
        question_id=qid,
        video_id=video_id,
        question_text="what did she believe",
        options=("a", "b", "c", "d"),
        correct_index=1,
        question_embedding_id=f"{qid}:e",
        option_embedding_ids=tuple(f"{qid}:o{k}" for k in range(4)),
    )


# --- surrogate scorer ------------------------------------------------------


def test_single_matching_frame_maxes_its_option():
    options = np.eye(4, 6)
    scores = surrogate_scorer(request_of([options[2]], options))
    assert scores[2] == 1.0
    assert np.argmax(scores) == 2
    assert np.sum(scores == scores[2]) == 1


def test_identical_options_score_identically():
    rng = np.random.default_rng(1)
    opt = rng.normal(size=5)
    scores = surrogate_scorer(request_of(rng.normal(size=(3, 5)), [opt] * 4))
    assert np.all(scores == scores[0])


def test_scores_match_mean_then_cosine_by_hand():
    rng = np.random.default_rng(2)
    frames = rng.normal(size=(5, 6))
    options = rng.normal(size=(4, 6))
    scores = surrogate_scorer(request_of(frames, options))
    pooled = frames.mean(axis=0)
    for k in range(4):
        assert scores[k] == pytest.approx(cosine(pooled, options[k]), abs=1e-12)


def test_cancelling_frames_score_zero():
    frames = [[1.0, 0.0], [-1.0, 0.0]]
    scores = surrogate_scorer(request_of(frames, np.eye(4, 2)))
    assert np.array_equal(scores, np.zeros(4))


# --- leave-frame-out -------------------------------------------------------


def planted_setup():
    """10 frames: 9 orthogonal to every option, frame 4 = correct option."""
    dim = 16
    item = qa_item()  # correct_index = 1
    basis = np.eye(dim)
    options = basis[:4]
    distractors = iter(basis[4:])
    frame_ids = tuple(f"v0:f{i}" for i in range(10))
    pairs = []
    for i, fid in enumerate(frame_ids):
        pairs.append((fid, options[1] if i == 4 else next(distractors)))
    pairs.append((item.question_embedding_id, options[1]))
    for k in range(4):
        pairs.append((item.option_embedding_ids[k], options[k]))
    return item, frame_ids, embeddings_from(pairs)


def margin_by_hand(frames, options, correct):
    pooled = np.mean(frames, axis=0)
    if np.linalg.norm(pooled) == 0:
        scores = np.zeros(len(options))
    else:
        scores = np.array([cosine(pooled, o) for o in options])
    others = [s for j, s in enumerate(scores) if j != correct]
    return scores[correct] - max(others)


def test_planted_frame_has_the_only_positive_influence():
    item, frame_ids, embeddings = planted_setup()
    profile = leave_frame_out(surrogate_scorer, frame_ids, item, embeddings)
    assert profile.predicted_key_frame == 4
    assert len(profile.influences) == 10

    # independent oracle: evaluate the margin on all 10 leave-one-out sets
    frames = embeddings.select(frame_ids).values.astype(np.float64)
    options = embeddings.select(item.option_embedding_ids).values.astype(np.float64)
    m_full = margin_by_hand(frames, options, item.correct_index)
    for i in range(10):
        without = np.delete(frames, i, axis=0)
        expected = m_full - margin_by_hand(without, options, item.correct_index)
        assert profile.influences[i] == pytest.approx(expected, abs=1e-12)
    assert profile.influences[4] > 0
    assert all(v < profile.influences[4] for i, v in enumerate(profile.influences) if i != 4)


def test_single_frame_video_uses_the_zero_floor():
    item = qa_item()
    options = np.eye(4, 8)
    pairs = [("v0:f0", options[1] + 0.01)]
    pairs.append((item.question_embedding_id, options[1]))
    pairs += [(item.option_embedding_ids[k], options[k]) for k in range(4)]
    embeddings = embeddings_from(pairs)

    calls = []

    def counting(request):
        calls.append(len(request.frame_ids))
        return surrogate_scorer(request)

    profile = leave_frame_out(counting, ("v0:f0",), item, embeddings)
    assert calls == [1]  # never scores the empty set
    assert profile.predicted_key_frame == 0
    frames = embeddings.select(("v0:f0",)).values.astype(np.float64)
    expected = margin_by_hand(frames, options, 1) - 0.0
    assert profile.influences == (pytest.approx(expected),)


def test_identical_frames_tie_to_frame_zero():
    item = qa_item()
    vec = np.r_[np.zeros(4), 1.0, 0.5]
    pairs = [(f"v0:f{i}", vec) for i in range(4)]
    pairs.append((item.question_embedding_id, vec))
    pairs += [(item.option_embedding_ids[k], np.eye(4, 6)[k]) for k in range(4)]
    embeddings = embeddings_from(pairs)
    profile = leave_frame_out(
        surrogate_scorer, tuple(f"v0:f{i}" for i in range(4)), item, embeddings
    )
    assert len(set(profile.influences)) == 1
    assert profile.predicted_key_frame == 0


def test_scorer_runs_exactly_n_plus_one_times():
    item, frame_ids, embeddings = planted_setup()
    calls = []

    def counting(request):
        calls.append(request.frame_ids)
        return surrogate_scorer(request)

    leave_frame_out(counting, frame_ids, item, embeddings)
    assert len(calls) == len(frame_ids) + 1
    assert calls[0] == frame_ids  # full set first
    for i, ablated in enumerate(calls[1:]):
        assert ablated == frame_ids[:i] + frame_ids[i + 1 :]


def test_permuting_frames_permutes_influences():
    rng = np.random.default_rng(9)
    item = qa_item()
    frame_ids = tuple(f"v0:f{i}" for i in range(6))
    pairs = [(fid, rng.normal(size=8)) for fid in frame_ids]
    pairs.append((item.question_embedding_id, rng.normal(size=8)))
    pairs += [(item.option_embedding_ids[k], rng.normal(size=8)) for k in range(4)]
    embeddings = embeddings_from(pairs)

    base = leave_frame_out(surrogate_scorer, frame_ids, item, embeddings)
    perm = [3, 0, 5, 1, 4, 2]
    permuted_ids = tuple(frame_ids[i] for i in perm)
    permuted = leave_frame_out(surrogate_scorer, permuted_ids, item, embeddings)
    for new_pos, old_pos in enumerate(perm):
        assert permuted.influences[new_pos] == pytest.approx(
            base.influences[old_pos], abs=1e-12
        )
    assert perm[permuted.predicted_key_frame] == base.predicted_key_frame


def test_duplicated_frames_keep_the_argmax_in_the_family():
    item, frame_ids, embeddings = planted_setup()
    base = leave_frame_out(surrogate_scorer, frame_ids, item, embeddings)

    doubled_pairs = []
    values = embeddings.select(frame_ids).values
    for i, fid in enumerate(frame_ids):
        doubled_pairs.append((fid, values[i]))
        doubled_pairs.append((f"{fid}:copy", values[i]))
    doubled_pairs.append(
        (item.question_embedding_id, embeddings.row(item.question_embedding_id))
    )
    doubled_pairs += [
        (oid, embeddings.row(oid)) for oid in item.option_embedding_ids
    ]
    doubled_ids = tuple(pid for pid, _ in doubled_pairs[: 2 * len(frame_ids)])
    doubled = leave_frame_out(
        surrogate_scorer, doubled_ids, item, embeddings_from(doubled_pairs)
    )
    # both copies of the original winner are the only acceptable answers
    family = {2 * base.predicted_key_frame, 2 * base.predicted_key_frame + 1}
    assert doubled.predicted_key_frame in family


def test_scorer_failure_carries_frame_context():
    item, frame_ids, embeddings = planted_setup()

    def explodes(request):
        if len(request.frame_ids) == 9 and "v0:f3" not in request.frame_ids:
            raise RuntimeError("backend died")
        return surrogate_scorer(request)

    with pytest.raises(ScorerError, match="leaving out frame 3"):
        leave_frame_out(explodes, frame_ids, item, embeddings)


def test_wrong_scorer_shape_is_rejected():
    item, frame_ids, embeddings = planted_setup()
    with pytest.raises(ScorerError, match="invalid scores"):
        leave_frame_out(lambda _: np.zeros(3), frame_ids, item, embeddings)
    with pytest.raises(ScorerError, match="invalid scores"):
        leave_frame_out(lambda _: np.full(4, np.nan), frame_ids, item, embeddings)


# --- batch -----------------------------------------------------------------


def test_batch_equals_individual_calls():
    from frameloc.synthetic import random_corpus

    corpus = random_corpus(n_videos=5, frames_per_video=6, questions_per_video=2, dim=12, seed=3)
    result = batch_influence(surrogate_scorer, corpus)
    assert result.failures == ()
    assert len(result.profiles) == 10
    for item, profile in zip(corpus.qa, result.profiles):
        alone = leave_frame_out(
            surrogate_scorer,
            corpus.frame_sequence_for(item),
            item,
            corpus.embeddings,
        )
        assert profile == alone


def test_identical_questions_yield_identical_profiles():
    from frameloc.datamodel import Corpus, VideoManifest, make_frame_ids

    rng = np.random.default_rng(5)
    frame_ids = make_frame_ids("v0:f", 5)
    pairs = [(fid, rng.normal(size=8)) for fid in frame_ids]
    pairs.append(("shared:e", rng.normal(size=8)))
    pairs += [(f"shared:o{k}", rng.normal(size=8)) for k in range(4)]
    items = tuple(
        QAItem(
            question_id=f"v0:q{j}",
            video_id="v0",
            question_text="same question twice",
            options=("a", "b", "c", "d"),
            correct_index=2,
            question_embedding_id="shared:e",
            option_embedding_ids=tuple(f"shared:o{k}" for k in range(4)),
        )
        for j in range(2)
    )
    corpus = Corpus(
        (VideoManifest("v0", 5, 1.0, frame_ids),),
        items,
        (),
        (),
        embeddings_from(pairs),
    )
    a, b = batch_influence(surrogate_scorer, corpus).profiles
    assert a.influences == b.influences
    assert a.predicted_key_frame == b.predicted_key_frame


def test_empty_qa_yields_empty_result():
    from frameloc.datamodel import Corpus, EmbeddingMatrix, VideoManifest, make_frame_ids

    video = VideoManifest("v0", 2, 1.0, make_frame_ids("v0:f", 2))
    embeddings = EmbeddingMatrix(
        ("v0:f0", "v0:f1"), np.ones((2, 3), dtype=np.float32)
    )
    corpus = Corpus((video,), (), (), (), embeddings)
    result = batch_influence(surrogate_scorer, corpus)
    assert result.profiles == ()
    assert result.failures == ()


def test_one_bad_item_does_not_sink_the_batch():
    from frameloc.synthetic import random_corpus

    corpus = random_corpus(n_videos=3, frames_per_video=4, questions_per_video=1, dim=8, seed=6)
    victim = corpus.qa[1].question_id

    def flaky(request):
        if request.question_id == victim:
            raise RuntimeError("transient")
        return surrogate_scorer(request)

    result = batch_influence(flaky, corpus)
    assert len(result.profiles) == 2
    assert [qid for qid, _ in result.failures] == [victim]
    assert "transient" in result.failures[0][1]


# --- external scorer -------------------------------------------------------

ECHO_SCORER = (
    "import sys\n"
    "for line in sys.stdin:\n"
    "    fields = line.split()\n"
    "    n = len(fields[1].split(','))\n"
    "    print(f'{0.01 * n:.4f} 0.5000 0.1000 0.1000', flush=True)\n"
)


def child(source: str) -> str:
    return f"{shlex.quote(sys.executable)} -c {shlex.quote(source)}"


def test_external_scorer_round_trip():
    with ExternalScorer(child(ECHO_SCORER)) as scorer:
        scores = scorer(request_of(np.ones((3, 2)), np.eye(4, 2)))
    assert np.array_equal(scores, [0.03, 0.5, 0.1, 0.1])


def test_external_scorer_drives_leave_frame_out():
    item, frame_ids, embeddings = planted_setup()
    with ExternalScorer(child(ECHO_SCORER)) as scorer:
        profile = leave_frame_out(scorer, frame_ids, item, embeddings)
    # every ablation drops the same echo-scored margin, so ties go to 0
    assert profile.predicted_key_frame == 0


def test_non_numeric_response_is_a_scorer_error():
    bad = "import sys\nfor line in sys.stdin:\n    print('a b c d', flush=True)\n"
    with ExternalScorer(child(bad)) as scorer:
        with pytest.raises(ScorerError, match="non-numeric"):
            scorer(request_of(np.ones((1, 2)), np.eye(4, 2)))


def test_wrong_field_count_is_a_scorer_error():
    bad = "import sys\nfor line in sys.stdin:\n    print('0.1 0.2', flush=True)\n"
    with ExternalScorer(child(bad)) as scorer:
        with pytest.raises(ScorerError, match="4"):
            scorer(request_of(np.ones((1, 2)), np.eye(4, 2)))


def test_timeout_is_a_scorer_error():
    sleepy = "import time, sys\nsys.stdin.readline()\ntime.sleep(30)\n"
    with ExternalScorer(child(sleepy), timeout=0.2) as scorer:
        with pytest.raises(ScorerError, match="timed out|timeout"):
            scorer(request_of(np.ones((1, 2)), np.eye(4, 2)))


def test_exit_before_answering_is_a_scorer_error():
    quitter = "import sys\nsys.stdin.readline()\n"
    with ExternalScorer(child(quitter), timeout=5.0) as scorer:
        with pytest.raises(ScorerError):
            scorer(request_of(np.ones((1, 2)), np.eye(4, 2)))


def test_dead_child_fails_every_later_call_without_waiting():
    # writes can slip into the pipe just after the child dies; the scorer
    # must remember the exit instead of blocking on a reply that cannot come
    import time

    quitter = "import sys\nsys.stdin.readline()\n"
    with ExternalScorer(child(quitter), timeout=30.0) as scorer:
        start = time.monotonic()
        for _ in range(5):
            with pytest.raises(ScorerError):
                scorer(request_of(np.ones((1, 2)), np.eye(4, 2)))
        assert time.monotonic() - start < 10.0
