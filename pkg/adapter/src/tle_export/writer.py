"""Bit-exact writer for TLE1 embedding files.

The layout is fixed and little-endian:

    offset 0   magic   4 bytes, ASCII "TLE1"
    offset 4   version u32, currently 1
    offset 8   dim     u32, > 0
    offset 12  count   u64
    offset 20  count * dim float32 values, row-major
    then       count id records: u16 byte length + UTF-8 bytes

This module is written against the format, not against the consuming
tool's code; byte parity is enforced by golden-byte tests. The only
precision loss is the 64-to-32-bit float conversion, and it happens in
exactly one visible place below.
"""

from __future__ import annotations

import os
import struct
from typing import Sequence

import numpy as np

MAGIC = b"TLE1"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
_MAX_ID_BYTES = 0xFFFF


class ExportError(ValueError):
    """The input cannot be represented in the target format."""


def _checked_ids(ids: Sequence[str]) -> list[bytes]:
    blobs: list[bytes] = []
    seen: set[str] = set()
    for i, embedding_id in enumerate(ids):
        if not isinstance(embedding_id, str) or not embedding_id:
            raise ExportError(f"id #{i} must be a non-empty string, got {embedding_id!r}")
        if embedding_id in seen:
            raise ExportError(f"duplicate id {embedding_id!r}")
        seen.add(embedding_id)
        blob = embedding_id.encode("utf-8")
        if len(blob) > _MAX_ID_BYTES:
            raise ExportError(
                f"id {embedding_id[:32]!r}... is {len(blob)} bytes encoded; "
                f"the id record length field caps at {_MAX_ID_BYTES}"
            )
        blobs.append(blob)
    return blobs


def _checked_rows(vectors, ids: Sequence[str]) -> list[np.ndarray]:
    rows: list[np.ndarray] = []
    dim: int | None = None
    for i, vector in enumerate(vectors):
        row = np.asarray(vector, dtype=np.float64)
        label = ids[i] if i < len(ids) else f"#{i}"
        if row.ndim != 1:
            raise ExportError(f"vector {label!r} is {row.ndim}-D, expected 1-D")
        if row.size < 1:
            raise ExportError(f"vector {label!r} is empty")
        if dim is None:
            dim = row.size
        elif row.size != dim:
            raise ExportError(
                f"dimensionality mismatch: vector {label!r} has {row.size} "
                f"values, earlier vectors have {dim}"
            )
        if not np.all(np.isfinite(row)):
            raise ExportError(f"non-finite value in vector {label!r}")
        rows.append(row)
    return rows


def export_embeddings(
    vectors,
    ids: Sequence[str],
    out_path: str | os.PathLike,
    dim: int | None = None,
) -> int:
    """Write one vector per id in TLE1 format; returns bytes written.

    ``vectors`` is any iterable of equal-length 1-D float arrays (a 2-D
    array works). ``dim`` is only needed when exporting zero vectors,
    where it cannot be inferred. Rejects non-finite input and values
    outside float32 range rather than writing a lossy file.
    """
    ids = list(ids)
    id_blobs = _checked_ids(ids)
    rows = _checked_rows(vectors, ids)
    if len(rows) != len(ids):
        raise ExportError(f"{len(ids)} ids for {len(rows)} vectors")
    if rows:
        inferred = rows[0].size
        if dim is not None and dim != inferred:
            raise ExportError(f"dim={dim} requested but vectors have {inferred} values")
        dim = inferred
    elif dim is None:
        raise ExportError("an empty export cannot infer dim; pass dim explicitly")
    elif dim < 1:
        raise ExportError(f"dim must be positive, got {dim}")

    stacked = (
        np.stack(rows) if rows else np.empty((0, dim), dtype=np.float64)
    )
    # The one sanctioned precision loss: 64-bit input down to the format's
    # 32-bit floats. Magnitudes beyond float32 range would turn infinite
    # here, which is corruption, not rounding, so they are rejected.
    with np.errstate(over="ignore"):
        values = stacked.astype(np.float32)
    if values.size and not np.all(np.isfinite(values)):
        bad = int(np.argwhere(~np.isfinite(values).all(axis=1))[0][0])
        raise ExportError(
            f"vector {ids[bad]!r} exceeds 32-bit float range and cannot be "
            f"exported without corruption"
        )

    written = 0
    with open(out_path, "wb") as f:
        written += f.write(_HEADER.pack(MAGIC, VERSION, dim, len(rows)))
        written += f.write(values.astype("<f4", copy=False).tobytes())
        for blob in id_blobs:
            written += f.write(struct.pack("<H", len(blob)))
            written += f.write(blob)
    return written
