"""Bridge from feature-extractor output to the localization tool's files.

The package holds no model code; it serializes arrays and metadata that an
extractor produced elsewhere. Everything it writes is consumed through two
fixed on-disk formats, so there is no code dependency in either direction.
"""

from .manifest import (
    FRAMES_PER_VIDEO,
    QuestionRecord,
    VideoRecord,
    export_manifest,
    frame_id_sequence,
    uniform_sample_times,
)
from .writer import ExportError, export_embeddings

__version__ = "0.1.0"

__all__ = [
    "ExportError",
    "export_embeddings",
    "export_manifest",
    "VideoRecord",
    "QuestionRecord",
    "frame_id_sequence",
    "uniform_sample_times",
    "FRAMES_PER_VIDEO",
]
