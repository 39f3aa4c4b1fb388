"""Offline prompt-embedding exporter for the TMKD-EMB v1 format."""

from .exporter import (
    DEFAULT_TEMPLATES,
    EMB_MAGIC,
    EMB_VERSION,
    ExportError,
    ExportJob,
    ModelUnavailableError,
    export,
    normalize_prompt,
    pseudo_embedding,
)

__all__ = [
    "DEFAULT_TEMPLATES",
    "EMB_MAGIC",
    "EMB_VERSION",
    "ExportError",
    "ExportJob",
    "ModelUnavailableError",
    "export",
    "normalize_prompt",
    "pseudo_embedding",
]
