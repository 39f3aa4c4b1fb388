"""Prompt-embedding ingestion and text-guided fusion of multi-view features.

Embeddings arrive precomputed in the TMKD-EMB v1 binary format, keyed by
"class_name/view_kind".  A two-layer network maps the concatenated per-class
view embeddings to softmax fusion weights; the weights then take a convex
combination of the per-view teacher features.  The table itself stays
frozen: gradients flow into the weight network and the features, never into
the embeddings.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ContractError, ShapeError, Tensor

EMB_MAGIC = b"TMKD"
EMB_VERSION = 1

VIEW_KINDS = ("rgb", "edge", "hf")

DEFAULT_TEMPLATES = {
    "rgb": "a photo of a {class}",
    "edge": "an edge enhanced image of a {class}",
    "hf": "a high-frequency enhanced image of a {class}",
}


class EmbParseError(ValueError):
    def __init__(self, message: str, record: int | None = None):
        if record is not None:
            message = f"{message} (record {record})"
        super().__init__(message)
        self.record = record


class EmbLookupError(KeyError):
    pass


@dataclass
class PromptTemplateSet:
    rgb_template: str = DEFAULT_TEMPLATES["rgb"]
    edge_template: str = DEFAULT_TEMPLATES["edge"]
    hf_template: str = DEFAULT_TEMPLATES["hf"]

    def __post_init__(self):
        for tpl in (self.rgb_template, self.edge_template, self.hf_template):
            if tpl.count("{class}") != 1:
                raise ContractError(f"template must contain {{class}} exactly once: {tpl!r}")

    def render(self, view_kind: str, class_name: str) -> str:
        tpl = {
            "rgb": self.rgb_template,
            "edge": self.edge_template,
            "hf": self.hf_template,
        }[view_kind]
        return tpl.replace("{class}", class_name)


@dataclass
class EmbeddingTable:
    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, key: str, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float32)
        if key in self.entries:
            raise EmbParseError(f"duplicate key {key!r}")
        if vec.shape != (self.dim,):
            raise EmbParseError(f"vector for {key!r} has dim {vec.shape}, expected ({self.dim},)")
        self.entries[key] = vec

    def lookup_class(self, class_name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        out = []
        for kind in VIEW_KINDS:
            key = f"{class_name}/{kind}"
            if key not in self.entries:
                raise EmbLookupError(key)
            out.append(self.entries[key])
        return tuple(out)

    def classes(self) -> list[str]:
        return sorted({k.rsplit("/", 1)[0] for k in self.entries})


def lookup_class_embeddings(table: EmbeddingTable, class_name: str):
    return table.lookup_class(class_name)


def load_embeddings(path) -> EmbeddingTable:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != EMB_MAGIC:
        raise EmbParseError(f"bad magic {buf[:4]!r}")
    if len(buf) < 16:
        raise EmbParseError("truncated header")
    version, count, dim = struct.unpack_from("<III", buf, 4)
    if version != EMB_VERSION:
        raise EmbParseError(f"unsupported version {version}")
    table = EmbeddingTable(dim=dim)
    pos = 16
    for rec in range(count):
        if pos + 2 > len(buf):
            raise EmbParseError("truncated record header", rec)
        (klen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if pos + klen + 4 * dim > len(buf):
            raise EmbParseError("truncated record payload", rec)
        key = buf[pos : pos + klen].decode("utf-8")
        pos += klen
        vec = np.frombuffer(buf[pos : pos + 4 * dim], dtype="<f4").copy()
        pos += 4 * dim
        try:
            table.add(key, vec)
        except EmbParseError as e:
            raise EmbParseError(str(e), rec) from None
    return table


def write_embeddings(table: EmbeddingTable, path) -> None:
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<III", EMB_VERSION, len(table.entries), table.dim))
        for key, vec in table.entries.items():
            kb = key.encode("utf-8")
            fh.write(struct.pack("<H", len(kb)))
            fh.write(kb)
            fh.write(vec.astype("<f4").tobytes())


def random_unit_table(class_names: list[str], dim: int, seed: int) -> EmbeddingTable:
    """Seeded stand-in table with one unit vector per (class, view) key."""
    rng = np.random.Generator(np.random.PCG64(seed))
    table = EmbeddingTable(dim=dim)
    for name in class_names:
        for kind in VIEW_KINDS:
            v = rng.standard_normal(dim)
            table.add(f"{name}/{kind}", (v / np.linalg.norm(v)).astype(np.float32))
    return table


# ------------------------------------------------------------- WeightNet


class WeightNet:
    """Two-layer network: concatenated view embeddings -> softmax weights."""

    def __init__(self, emb_dim: int, hidden: int = 64, seed: int = 0):
        rng = np.random.Generator(np.random.PCG64(seed))
        d_in = 3 * emb_dim
        s1 = 1.0 / np.sqrt(d_in)
        s2 = 1.0 / np.sqrt(hidden)
        self.emb_dim = emb_dim
        self.hidden = hidden
        self.W1 = Tensor(rng.uniform(-s1, s1, size=(hidden, d_in)), requires_grad=True)
        self.b1 = Tensor(np.zeros(hidden), requires_grad=True)
        self.W2 = Tensor(rng.uniform(-s2, s2, size=(3, hidden)), requires_grad=True)
        self.b2 = Tensor(np.zeros(3), requires_grad=True)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [
            ("weightnet.W1", self.W1),
            ("weightnet.b1", self.b1),
            ("weightnet.W2", self.W2),
            ("weightnet.b2", self.b2),
        ]


def weightnet_forward(
    net: WeightNet,
    t_rgb,
    t_edge,
    t_hf,
    active: tuple[bool, bool, bool] = (True, True, True),
) -> Tensor:
    """Fusion weights over the active views; inactive entries are dropped.

    With a subset of views active the softmax renormalizes over their
    logits, so the returned vector has one entry per active view and
    always sums to 1.
    """
    embs = [t_rgb, t_edge, t_hf]
    for e in embs:
        d = e.data.shape if isinstance(e, Tensor) else np.asarray(e).shape
        if d != (net.emb_dim,):
            raise ShapeError(f"embedding dim {d} does not match WeightNet dim ({net.emb_dim},)")
    x = T.concat([e if isinstance(e, Tensor) else Tensor(np.asarray(e, dtype=np.float64)) for e in embs])
    h = T.relu(T.add(T.matmul(net.W1, x), net.b1))
    logits = T.add(T.matmul(net.W2, h), net.b2)
    idx = [i for i, a in enumerate(active) if a]
    if not idx:
        raise ContractError("at least one view must be active")
    if len(idx) < 3:
        logits = T.take(logits, idx)
    return T.softmax(logits, axis=-1)


def fuse_features(w: Tensor, f_rgb: Tensor, f_edge: Tensor, f_hf: Tensor) -> Tensor:
    """Convex combination of the three view features (single sample)."""
    feats = [f_rgb, f_edge, f_hf]
    d = feats[0].data.shape
    for f in feats:
        if f.data.shape != d:
            raise ShapeError(f"feature shapes disagree: {f.data.shape} vs {d}")
    if w.data.shape != (3,):
        raise ShapeError(f"fusion weights must have shape (3,), got {w.shape}")
    mat = T.stack_rows(feats)  # (3, d)
    return T.matmul(w, mat)


def fuse_batch(wmat: Tensor, feats: list[Tensor]) -> Tensor:
    """Row-wise fusion: out[i] = sum_v wmat[i, v] * feats[v][i]."""
    if wmat.data.ndim != 2 or wmat.data.shape[1] != len(feats):
        raise ShapeError(f"weight matrix {wmat.shape} does not match {len(feats)} views")
    out = None
    for v, f in enumerate(feats):
        term = T.colmul(f, T.select_col(wmat, v))
        out = term if out is None else T.add(out, term)
    return out
