import numpy as np
import pytest

from tle_export.manifest import (
    FRAMES_PER_VIDEO,
    QuestionRecord,
    VideoRecord,
    export_manifest,
    frame_id_sequence,
    uniform_sample_times,
)
from tle_export.writer import ExportError


def video(video_id="v0", n_frames=100, fps=10.0) -> VideoRecord:
    return VideoRecord(video_id, n_frames, fps, f"{video_id}:f")


def question(qid="v0:q0", video_id="v0", n_options=4, correct=1) -> QuestionRecord:
    return QuestionRecord(
        question_id=qid,
        video_id=video_id,
        question_text="why did he wave",
        options=tuple(f"choice {k}" for k in range(n_options)),
        correct_index=correct,
        question_embedding_id=f"{qid}:e",
        option_embedding_ids=tuple(f"{qid}:o{k}" for k in range(n_options)),
    )


def test_one_video_one_question_is_two_lines(tmp_path):
    path = tmp_path / "two.manifest"
    n = export_manifest([video(n_frames=2)], [question()], path)
    assert n == 2
    assert path.read_text(encoding="utf-8") == (
        "VIDEO v0 2 10.0 v0:f\n"
        "QA v0:q0 v0 1 v0:q0:e v0:q0:o0 v0:q0:o1 v0:q0:o2 v0:q0:o3"
        " | why did he wave | choice 0 | choice 1 | choice 2 | choice 3\n"
    )


def test_integer_fps_still_serializes_as_a_float(tmp_path):
    path = tmp_path / "fps.manifest"
    export_manifest([video(fps=25)], [], path)
    assert " 25.0 " in path.read_text(encoding="utf-8")


def test_five_option_questions_are_rejected_locally(tmp_path):
    with pytest.raises(ExportError, match="has 5 options"):
        export_manifest([video()], [question(n_options=5)], tmp_path / "x")
    assert not (tmp_path / "x").exists()


def test_three_option_questions_are_rejected_locally(tmp_path):
    with pytest.raises(ExportError, match="has 3 options"):
        export_manifest([video()], [question(n_options=3)], tmp_path / "x")


def test_duplicate_ids_are_rejected(tmp_path):
    with pytest.raises(ExportError, match="duplicate video id"):
        export_manifest([video(), video()], [], tmp_path / "x")
    with pytest.raises(ExportError, match="duplicate question id"):
        export_manifest([video()], [question(), question()], tmp_path / "x")


def test_questions_must_reference_an_exported_video(tmp_path):
    with pytest.raises(ExportError, match="not part of this export"):
        export_manifest([video()], [question(video_id="elsewhere")], tmp_path / "x")


def test_out_of_range_answers_and_bad_counts_fail(tmp_path):
    with pytest.raises(ExportError, match="outside"):
        export_manifest([video()], [question(correct=4)], tmp_path / "x")
    with pytest.raises(ExportError, match="n_frames"):
        export_manifest([video(n_frames=0)], [], tmp_path / "x")
    with pytest.raises(ExportError, match="fps"):
        export_manifest([video(fps=0.0)], [], tmp_path / "x")


def test_grammar_breaking_characters_are_rejected(tmp_path):
    with pytest.raises(ExportError, match="video_id"):
        export_manifest([video(video_id="has space")], [], tmp_path / "x")
    bad_text = QuestionRecord(
        "v0:q0", "v0", "a | b", ("w", "x", "y", "z"), 0,
        "v0:q0:e", ("a0", "a1", "a2", "a3"),
    )
    with pytest.raises(ExportError, match="question text"):
        export_manifest([video()], [bad_text], tmp_path / "x")


# --- the sampling contract -------------------------------------------------


def test_every_clip_gets_one_hundred_frame_ids():
    ids = frame_id_sequence("v0:f")
    assert len(ids) == FRAMES_PER_VIDEO == 100
    assert ids[0] == "v0:f00"
    assert ids[-1] == "v0:f99"


def test_padding_width_follows_the_largest_index():
    assert frame_id_sequence("p", 1) == ("p0",)
    assert frame_id_sequence("p", 10)[-1] == "p9"
    assert frame_id_sequence("p", 101)[0] == "p000"
    with pytest.raises(ExportError):
        frame_id_sequence("p", 0)


def test_sample_times_are_evenly_spaced_midpoints():
    times = uniform_sample_times(30.0)
    assert len(times) == 100
    assert times[0] == pytest.approx(0.15)
    assert times[-1] == pytest.approx(29.85)
    assert np.allclose(np.diff(times), 0.3)
    assert 0 < times[0] and times[-1] < 30.0


def test_sample_times_reject_degenerate_input():
    with pytest.raises(ExportError):
        uniform_sample_times(0.0)
    with pytest.raises(ExportError):
        uniform_sample_times(10.0, 0)
