"""Feature exporter writing UMFS files for the feature-level trainer."""

from .encoders import HFClipEncoder, TinyEncoder, make_encoder
from .export import ExportManifest, build_prompt, export
from .umfs import write_umfs

__all__ = [
    "ExportManifest",
    "HFClipEncoder",
    "TinyEncoder",
    "build_prompt",
    "export",
    "make_encoder",
    "write_umfs",
]
