"""Toy MLP backbones, projection heads, and the binary checkpoint format.

The teacher and student are small fully connected networks over flattened
views.  forward() returns (feature, logits) where the feature is the last
hidden activation; the classifier is a single affine layer on top, which is
what lets fused teacher features be pushed through the classifier alone.
"""

from __future__ import annotations

import struct

import numpy as np

from . import tensor as T
from .tensor import ContractError, ShapeError, Tensor


class Linear:
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, trainable: bool = True):
        s = 1.0 / np.sqrt(d_in)
        self.W = Tensor(rng.uniform(-s, s, size=(d_in, d_out)), requires_grad=trainable)
        self.b = Tensor(np.zeros(d_out), requires_grad=trainable)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.W), self.b)


class MlpNet:
    """MLP with explicit feature/logit heads.

    Layer sizes: d_in -> hidden[0] -> ... -> hidden[-1] -> n_classes.
    The activation after the last hidden layer is the feature; hidden[-1]
    is therefore the feature dimension.
    """

    def __init__(self, d_in: int, hidden: list[int], n_classes: int, seed: int = 0):
        if not hidden:
            raise ShapeError("MlpNet needs at least one hidden layer for the feature head")
        rng = np.random.Generator(np.random.PCG64(seed))
        self.d_in = d_in
        self.hidden = list(hidden)
        self.n_classes = n_classes
        sizes = [d_in] + self.hidden
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.classifier = Linear(self.hidden[-1], n_classes, rng)

    @property
    def d_feat(self) -> int:
        return self.hidden[-1]

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, lin in enumerate(self.layers):
            out += [(f"layer{i}.W", lin.W), (f"layer{i}.b", lin.b)]
        out += [("classifier.W", self.classifier.W), ("classifier.b", self.classifier.b)]
        return out

    def freeze(self) -> "MlpNet":
        for _, p in self.parameters():
            p.requires_grad = False
        return self

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        if x.data.shape[-1] != self.d_in:
            raise ShapeError(f"input dim {x.data.shape[-1]} does not match network d_in {self.d_in}")
        h = x
        for lin in self.layers:
            h = T.relu(lin(h))
        return h, self.classifier(h)

    def logits_from_feature(self, feature: Tensor) -> Tensor:
        if feature.data.shape[-1] != self.d_feat:
            raise ShapeError(
                f"feature dim {feature.data.shape[-1]} does not match classifier input {self.d_feat}"
            )
        return self.classifier(feature)


class Projector:
    """Single affine map into the shared comparison space."""

    def __init__(self, d_src: int, d_common: int, seed: int = 0):
        rng = np.random.Generator(np.random.PCG64(seed))
        self.d_src = d_src
        self.d_common = d_common
        self.lin = Linear(d_src, d_common, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin(x)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [("proj.W", self.lin.W), ("proj.b", self.lin.b)]


def teacher_multiview_forward(
    teacher: MlpNet, views: dict[str, Tensor]
) -> tuple[dict[str, Tensor], dict[str, Tensor]]:
    """Apply the shared teacher to each present view; returns features and logits."""
    feats, logits = {}, {}
    for kind, x in views.items():
        if x is None:
            raise ContractError(f"view {kind!r} is missing")
        f, z = teacher.forward(x)
        feats[kind] = f
        logits[kind] = z
    return feats, logits


def cross_entropy(logits: Tensor, labels) -> Tensor:
    lp = T.log_softmax(logits, axis=-1)
    if lp.data.ndim == 2:
        picked = T.take_rows(lp, labels)
    else:
        picked = T.take(lp, [int(labels)])
    return T.scale(T.mean(picked), -1.0)


# ------------------------------------------------------------ checkpoints

CKPT_MAGIC = b"TMKC"
CKPT_VERSION = 1


class CkptParseError(ValueError):
    pass


def save_checkpoint(named: list[tuple[str, Tensor]], path) -> None:
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(named)))
        for name, t in named:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            dims = t.data.shape
            fh.write(struct.pack("<B", len(dims)))
            for d in dims:
                fh.write(struct.pack("<I", d))
            fh.write(t.data.astype("<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CKPT_MAGIC:
        raise CkptParseError(f"bad checkpoint magic {buf[:4]!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != CKPT_VERSION:
        raise CkptParseError(f"unsupported checkpoint version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(buf[pos : pos + 8 * n], dtype="<f8").reshape(dims)
        pos += 8 * n
        if name in out:
            raise CkptParseError(f"duplicate tensor name {name!r}")
        out[name] = arr.copy()
    return out


def restore_parameters(named: list[tuple[str, Tensor]], arrays: dict[str, np.ndarray]) -> None:
    for name, t in named:
        if name not in arrays:
            raise CkptParseError(f"checkpoint missing tensor {name!r}")
        if arrays[name].shape != t.data.shape:
            raise CkptParseError(
                f"tensor {name!r} shape {arrays[name].shape} does not match {t.data.shape}"
            )
        t.data = arrays[name].astype(np.float64).copy()


def mlp_from_checkpoint(path) -> MlpNet:
    """Rebuild an MlpNet from a checkpoint, inferring sizes from tensor shapes."""
    arrays = load_checkpoint(path)
    i, hidden = 0, []
    while f"layer{i}.W" in arrays:
        hidden.append(arrays[f"layer{i}.W"].shape[1])
        i += 1
    if not hidden or "classifier.W" not in arrays:
        raise CkptParseError("checkpoint does not describe an MlpNet")
    d_in = arrays["layer0.W"].shape[0]
    n_classes = arrays["classifier.W"].shape[1]
    net = MlpNet(d_in, hidden, n_classes)
    restore_parameters(net.parameters(), arrays)
    return net
