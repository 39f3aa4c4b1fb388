"""Prompt construction and TMKD-EMB v1 serialization.

Two modes.  Model mode encodes the prompts with a pretrained
vision-language text encoder (512-dim).  Pseudo mode derives a
deterministic unit vector from a seeded hash of each normalized prompt
string, so downstream tests never need model weights or a network.

The output format is the TMKD-EMB v1 binary: magic "TMKD", u32 version,
u32 record count, u32 dim, then per record a u16 key length, the UTF-8
key "class_name/view_kind", and dim little-endian float32 values.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

EMB_MAGIC = b"TMKD"
EMB_VERSION = 1

VIEW_KINDS = ("rgb", "edge", "hf")

DEFAULT_TEMPLATES = {
    "rgb": "a photo of a {class}",
    "edge": "an edge enhanced image of a {class}",
    "hf": "a high-frequency enhanced image of a {class}",
}

MODEL_DIM = 512


class ExportError(ValueError):
    """Invalid job description (bad class list, bad template, ...)."""


class ModelUnavailableError(RuntimeError):
    """Raised in model mode when no text encoder can be loaded."""

    def __init__(self):
        super().__init__(
            "no pretrained text encoder is available; "
            "rerun with mode='pseudo' for deterministic hash embeddings"
        )


@dataclass
class ExportJob:
    class_names: list[str]
    output_path: str
    mode: str = "pseudo"
    pseudo_seed: int = 0
    pseudo_dim: int = 64
    templates: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))

    def __post_init__(self):
        if not self.class_names:
            raise ExportError("class list is empty")
        # names are compared after normalization so "Cardinal" and
        # " cardinal " count as duplicates
        seen = set()
        for name in self.class_names:
            norm = " ".join(name.split()).lower()
            if not norm:
                raise ExportError("class names must be non-empty")
            if norm in seen:
                raise ExportError(f"duplicate class name {name!r}")
            seen.add(norm)
        if self.mode not in ("model", "pseudo"):
            raise ExportError(f"mode must be 'model' or 'pseudo', got {self.mode!r}")
        if self.pseudo_dim < 1:
            raise ExportError("pseudo_dim must be positive")
        for kind in VIEW_KINDS:
            tpl = self.templates.get(kind)
            if tpl is None or tpl.count("{class}") != 1:
                raise ExportError(
                    f"template for {kind!r} must contain {{class}} exactly once, got {tpl!r}"
                )


def normalize_prompt(template: str, class_name: str) -> str:
    """Render a prompt: lowercase class name, collapsed single spaces."""
    name = " ".join(class_name.split()).lower()
    prompt = template.replace("{class}", name)
    return " ".join(prompt.split())


def pseudo_embedding(prompt: str, dim: int, seed: int) -> np.ndarray:
    """Unit-norm float32 vector from a seeded hash of the prompt string.

    The hash feeds a PCG64 stream, so the result is identical across
    platforms and process invocations.
    """
    digest = hashlib.sha256(f"{seed}:{prompt}".encode("utf-8")).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
    v = rng.standard_normal(dim)
    return (v / np.linalg.norm(v)).astype(np.float32)


def _load_text_encoder():
    """Best-effort load of a pretrained text encoder (the fidelity path)."""
    try:
        import open_clip  # type: ignore
        import torch  # type: ignore
    except ImportError:
        raise ModelUnavailableError() from None
    model, _, _ = open_clip.create_model_and_transforms("ViT-B-32", pretrained="openai")
    tokenizer = open_clip.get_tokenizer("ViT-B-32")

    def encode(prompt: str) -> np.ndarray:
        with torch.no_grad():
            tokens = tokenizer([prompt])
            return model.encode_text(tokens).numpy()[0]

    return encode


def _model_embedding(encoder, prompt: str) -> np.ndarray:
    return np.asarray(encoder(prompt), dtype=np.float32).reshape(MODEL_DIM)


def build_records(job: ExportJob, encoder=None) -> list[tuple[str, np.ndarray]]:
    if job.mode == "model" and encoder is None:
        encoder = _load_text_encoder()
    records = []
    for name in job.class_names:
        norm_name = " ".join(name.split()).lower()
        for kind in VIEW_KINDS:
            prompt = normalize_prompt(job.templates[kind], name)
            if job.mode == "pseudo":
                vec = pseudo_embedding(prompt, job.pseudo_dim, job.pseudo_seed)
            else:
                vec = _model_embedding(encoder, prompt)
            records.append((f"{norm_name}/{kind}", vec))
    return records


def write_emb_file(records: list[tuple[str, np.ndarray]], path) -> None:
    if not records:
        raise ExportError("nothing to write")
    dim = records[0][1].size
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<III", EMB_VERSION, len(records), dim))
        for key, vec in records:
            kb = key.encode("utf-8")
            fh.write(struct.pack("<H", len(kb)))
            fh.write(kb)
            fh.write(vec.astype("<f4").tobytes())


def export(job: ExportJob, encoder=None) -> int:
    """Run the job; returns the number of records written."""
    records = build_records(job, encoder)
    write_emb_file(records, job.output_path)
    return len(records)
