from __future__ import annotations

import struct

import numpy as np
import pytest

from frameloc.datamodel import EmbeddingMatrix
from frameloc.store import (
    ManifestError,
    ManifestSet,
    TLEFormatError,
    load_corpus,
    load_projector,
    read_embeddings,
    read_manifest_set,
    read_predictions,
    save_projector,
    write_embeddings,
    write_manifest_set,
    write_predictions,
)


def matrix_of(ids, rows) -> EmbeddingMatrix:
    return EmbeddingMatrix(tuple(ids), np.asarray(rows, dtype=np.float32))


# --- binary format ---------------------------------------------------------


def test_single_vector_file_is_exactly_the_documented_bytes(tmp_path):
    # Golden bytes assembled by hand from the layout, not via the writer:
    # 20-byte header + 8 value bytes + (2 + 2) id bytes = 32 bytes.
    expected = (
        struct.pack("<4sIIQ", b"TLE1", 1, 2, 1)
        + struct.pack("<2f", 1.0, 0.0)
        + struct.pack("<H", 2)
        + b"f0"
    )
    assert len(expected) == 32

    path = tmp_path / "one.tle"
    written = write_embeddings(matrix_of(["f0"], [[1.0, 0.0]]), path)
    assert written == 32
    assert path.read_bytes() == expected


def test_empty_matrix_writes_header_only(tmp_path):
    path = tmp_path / "empty.tle"
    assert write_embeddings(EmbeddingMatrix.empty(4), path) == 20
    m = read_embeddings(path)
    assert m.count == 0
    assert m.dim == 4


def test_round_trip_is_bit_identical(tmp_path):
    rng = np.random.default_rng(7)
    values = rng.normal(size=(1000, 512)).astype(np.float32)
    ids = tuple(f"vec:{i:04d}" for i in range(1000))
    path = tmp_path / "big.tle"
    write_embeddings(EmbeddingMatrix(ids, values), path)
    back = read_embeddings(path)
    assert back.ids == ids
    assert back.values.dtype == np.float32
    assert back.values.tobytes() == values.tobytes()


def test_round_trip_preserves_non_ascii_ids(tmp_path):
    ids = ("vidéo:0", "中文:1")
    path = tmp_path / "utf8.tle"
    write_embeddings(matrix_of(ids, [[1.0], [2.0]]), path)
    assert read_embeddings(path).ids == ids


def test_bad_magic_is_rejected(tmp_path):
    path = tmp_path / "bad.tle"
    path.write_bytes(struct.pack("<4sIIQ", b"XLE1", 1, 2, 0))
    with pytest.raises(TLEFormatError, match="bad magic"):
        read_embeddings(path)


def test_unsupported_version_is_rejected(tmp_path):
    path = tmp_path / "v9.tle"
    path.write_bytes(struct.pack("<4sIIQ", b"TLE1", 9, 2, 0))
    with pytest.raises(TLEFormatError, match="version"):
        read_embeddings(path)


def test_declared_count_beyond_file_size_is_caught_before_reading(tmp_path):
    # Header claims 10 rows but only 2 are present; the reader must notice
    # from the file size alone, not by allocating 10 rows.
    path = tmp_path / "short.tle"
    header = struct.pack("<4sIIQ", b"TLE1", 1, 4, 10)
    two_rows = np.zeros((2, 4), dtype="<f4").tobytes()
    path.write_bytes(header + two_rows)
    with pytest.raises(TLEFormatError, match="truncated"):
        read_embeddings(path)


def test_hostile_header_count_does_not_allocate(tmp_path):
    path = tmp_path / "hostile.tle"
    path.write_bytes(struct.pack("<4sIIQ", b"TLE1", 1, 1024, 2**40))
    with pytest.raises(TLEFormatError, match="truncated"):
        read_embeddings(path)


def test_truncated_id_records_are_rejected(tmp_path):
    path = tmp_path / "noid.tle"
    good = struct.pack("<4sIIQ", b"TLE1", 1, 2, 1) + struct.pack("<2f", 1.0, 0.0)
    path.write_bytes(good)  # id record missing entirely
    with pytest.raises(TLEFormatError, match="truncated id"):
        read_embeddings(path)


def test_trailing_garbage_is_rejected(tmp_path):
    path = tmp_path / "trail.tle"
    write_embeddings(matrix_of(["f0"], [[1.0, 0.0]]), path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(TLEFormatError, match="trailing"):
        read_embeddings(path)


def test_duplicate_ids_in_file_are_rejected(tmp_path):
    path = tmp_path / "dup.tle"
    blob = struct.pack("<H", 2) + b"f0"
    path.write_bytes(
        struct.pack("<4sIIQ", b"TLE1", 1, 1, 2)
        + struct.pack("<2f", 1.0, 2.0)
        + blob
        + blob
    )
    with pytest.raises(TLEFormatError, match="duplicate"):
        read_embeddings(path)


def test_oversized_id_is_rejected_before_writing(tmp_path):
    path = tmp_path / "never.tle"
    with pytest.raises(ValueError, match="65535"):
        write_embeddings(matrix_of(["x" * 70000], [[1.0]]), path)
    assert not path.exists()


# --- manifest text ---------------------------------------------------------

MINIMAL = """\
# one video, one question
VIDEO v0 10 10.0 v0:f
QA v0:q0 v0 2 v0:q0:e v0:q0:o0 v0:q0:o1 v0:q0:o2 v0:q0:o3 | why did she wave | greeting | warning | stretching | bug
LABEL v0:q0 3
"""


def test_minimal_manifest_parses_to_matching_objects(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text(MINIMAL, encoding="utf-8")
    ms = read_manifest_set(path)
    assert len(ms.manifests) == 1
    assert len(ms.qa) == 1
    assert len(ms.labels) == 1
    assert ms.composites == ()

    video = ms.manifests[0]
    assert video.video_id == "v0"
    assert video.n_frames == 10
    assert video.fps == 10.0
    assert video.frame_ids == tuple(f"v0:f{i}" for i in range(10))

    item = ms.qa[0]
    assert item.question_id == "v0:q0"
    assert item.correct_index == 2
    assert item.question_text == "why did she wave"
    assert item.options == ("greeting", "warning", "stretching", "bug")
    assert item.option_embedding_ids == tuple(f"v0:q0:o{k}" for k in range(4))

    assert ms.labels[0].question_id == "v0:q0"
    assert ms.labels[0].frame_index == 3


def test_record_order_does_not_matter(tmp_path):
    shuffled = "\n".join(reversed(MINIMAL.strip().splitlines())) + "\n"
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    a.write_text(MINIMAL, encoding="utf-8")
    b.write_text(shuffled, encoding="utf-8")
    assert read_manifest_set(a) == read_manifest_set(b)


def test_missing_qa_field_names_the_field_and_question(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text("QA v0:q0 v0\n", encoding="utf-8")
    with pytest.raises(ManifestError) as err:
        read_manifest_set(path)
    assert "correct_index" in str(err.value)
    assert "v0:q0" in str(err.value)
    assert "line 1" in str(err.value)


def test_unknown_record_type_reports_line_number(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text("VIDEO v0 2 1.0 v0:f\nFRAME nope\n", encoding="utf-8")
    with pytest.raises(ManifestError, match="line 2"):
        read_manifest_set(path)


def test_non_integer_frame_count_is_a_syntax_error(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text("VIDEO v0 ten 1.0 v0:f\n", encoding="utf-8")
    with pytest.raises(ManifestError, match="n_frames"):
        read_manifest_set(path)


def test_composite_line_resolves_against_video_records(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text(
        "VIDEO a 10 1.0 a:f\nVIDEO b 20 1.0 b:f\nCOMPOSITE c0 a,b\n",
        encoding="utf-8",
    )
    (c,) = read_manifest_set(path).composites
    assert c.total_frames == 30
    assert [(s.video_id, s.start_global, s.n_frames) for s in c.segments] == [
        ("a", 0, 10),
        ("b", 10, 20),
    ]


def test_composite_referencing_unknown_video_fails(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text("COMPOSITE c0 a,b\n", encoding="utf-8")
    with pytest.raises(ManifestError, match="no VIDEO record"):
        read_manifest_set(path)


def test_manifest_round_trip(tmp_path):
    src = tmp_path / "src.txt"
    src.write_text(
        MINIMAL + "VIDEO v1 10 10.0 v1:f\nCOMPOSITE c0 v0,v1\n", encoding="utf-8"
    )
    ms = read_manifest_set(src)
    out = tmp_path / "out.txt"
    write_manifest_set(ms, out)
    assert read_manifest_set(out) == ms


def test_writer_rejects_pipe_in_question_text(tmp_path):
    import dataclasses

    path = tmp_path / "m.txt"
    path.write_text(MINIMAL, encoding="utf-8")
    ms = read_manifest_set(path)
    bad = dataclasses.replace(ms.qa[0], question_text="why | did she wave")
    with pytest.raises(ManifestError, match="cannot be serialized"):
        write_manifest_set(
            ManifestSet(ms.manifests, (bad,), ms.labels, ms.composites),
            tmp_path / "out.txt",
        )


def test_load_corpus_raises_on_dangling_references(tmp_path):
    manifest = tmp_path / "m.txt"
    manifest.write_text(MINIMAL, encoding="utf-8")
    embeddings = tmp_path / "e.tle"
    write_embeddings(matrix_of(["unrelated"], [[1.0]]), embeddings)
    from frameloc.store import CorpusValidationError

    with pytest.raises(CorpusValidationError) as err:
        load_corpus(manifest, embeddings)
    codes = {v.code for v in err.value.violations}
    assert "embedding.unresolved" in codes


# --- predictions -----------------------------------------------------------


def test_predictions_round_trip_sorted(tmp_path):
    path = tmp_path / "p.txt"
    write_predictions({"b:q1": 5, "a:q0": 0}, path)
    assert path.read_text(encoding="utf-8") == "PRED a:q0 0\nPRED b:q1 5\n"
    assert read_predictions(path) == {"a:q0": 0, "b:q1": 5}


def test_predictions_reader_skips_comments_and_blanks(tmp_path):
    path = tmp_path / "p.txt"
    path.write_text("# header\n\nPRED q0 3\n", encoding="utf-8")
    assert read_predictions(path) == {"q0": 3}


def test_duplicate_prediction_is_rejected(tmp_path):
    path = tmp_path / "p.txt"
    path.write_text("PRED q0 3\nPRED q0 4\n", encoding="utf-8")
    with pytest.raises(ManifestError, match="duplicate"):
        read_predictions(path)


def test_non_integer_prediction_is_rejected(tmp_path):
    path = tmp_path / "p.txt"
    path.write_text("PRED q0 3.5\n", encoding="utf-8")
    with pytest.raises(ManifestError, match="integer"):
        read_predictions(path)


# --- projector JSON --------------------------------------------------------


def test_projector_json_round_trip_is_exact(tmp_path):
    from frameloc.datamodel import Projector

    rng = np.random.default_rng(3)
    p = Projector(rng.normal(size=(5, 3)), rng.normal(size=5))
    path = tmp_path / "p.json"
    save_projector(p, path)
    q = load_projector(path)
    assert np.array_equal(p.weights, q.weights)
    assert np.array_equal(p.bias, q.bias)


def test_malformed_projector_file_reports_path(tmp_path):
    path = tmp_path / "p.json"
    path.write_text("{\"d_in\": 2}", encoding="utf-8")
    with pytest.raises(ValueError, match="p.json"):
        load_projector(path)
