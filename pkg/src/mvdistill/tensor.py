"""Dense float64 tensors with reverse-mode automatic differentiation.

Just enough machinery for the fusion network, the toy MLPs and the three
distillation losses: matmul, the elementwise suite, softmax / log-softmax,
KL divergence and L2 normalization, each with hand-derived adjoints.

Storage is flat row-major float64 only; no views, no strides, no
broadcasting beyond the bias case add() documents.  The operation tape is
the implicit parent graph hanging off each Tensor: backward() topologically
sorts it, zeroes every reachable grad and replays adjoints in reverse, so
calling backward() twice without re-running the forward pass yields
identical grads (no silent accumulation across calls).
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand dimensions are incompatible."""


class NumericError(ValueError):
    """Input is numerically invalid (NaN, near-zero norm, ...)."""


class ContractError(ValueError):
    """A documented precondition was violated."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _topo(self) -> list["Tensor"]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self) -> None:
        """Populate .grad on every reachable tensor.

        Grads of the reachable subgraph are reset first, so a second call
        reproduces the same grads instead of doubling them.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        order = self._topo()
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------- matmul


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeError(f"matmul needs 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out_data = ad @ bd

    def backward(g):
        if ad.ndim == 2 and bd.ndim == 2:
            a.grad += g @ bd.T
            b.grad += ad.T @ g
        elif ad.ndim == 2 and bd.ndim == 1:
            a.grad += np.outer(g, bd)
            b.grad += ad.T @ g
        elif ad.ndim == 1 and bd.ndim == 2:
            a.grad += bd @ g
            b.grad += np.outer(ad, g)
        else:
            a.grad += g * bd
            b.grad += g * ad

    return _node(out_data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got {a.shape}")

    def backward(g):
        a.grad += g.T

    return _node(a.data.T.copy(), (a,), backward)


# ------------------------------------------------------ elementwise suite


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a rank-1 bias broadcast over rows."""
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:
        def backward(g):
            a.grad += g
            b.grad += g
    elif ad.ndim == 2 and bd.ndim == 1 and ad.shape[1] == bd.shape[0]:
        def backward(g):
            a.grad += g
            b.grad += g.sum(axis=0)
    else:
        raise ShapeError(f"add shapes disagree: {ad.shape} + {bd.shape}")
    return _node(ad + bd, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        a.grad += g * c

    return _node(a.data * c, (a,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shapes disagree: {a.shape} * {b.shape}")

    def backward(g):
        a.grad += g * b.data
        b.grad += g * a.data

    return _node(a.data * b.data, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient 0 at the origin

    def backward(g):
        a.grad += g * mask

    return _node(np.where(mask, a.data, 0.0), (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        a.grad += g * out_data

    return _node(out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("log requires strictly positive inputs")

    def backward(g):
        a.grad += g / a.data

    return _node(np.log(a.data), (a,), backward)


def concat(tensors: list[Tensor]) -> Tensor:
    for t in tensors:
        if t.data.ndim != 1:
            raise ShapeError(f"concat needs 1-D tensors, got {t.shape}")
    sizes = [t.data.shape[0] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            t.grad += g[lo:hi]

    return _node(np.concatenate([t.data for t in tensors]), tuple(tensors), backward)


def mean(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        a.grad += np.full_like(a.data, float(g) / n)

    return _node(np.asarray(a.data.mean()), (a,), backward)


def stack_rows(tensors: list[Tensor]) -> Tensor:
    """Stack 1-D tensors into a matrix; rows may share the same tensor."""
    d = tensors[0].data.shape[0]
    for t in tensors:
        if t.data.shape != (d,):
            raise ShapeError(f"stack_rows needs matching 1-D tensors, got {t.shape}")

    def backward(g):
        for i, t in enumerate(tensors):
            t.grad += g[i]

    return _node(np.stack([t.data for t in tensors]), tuple(tensors), backward)


def select_col(a: Tensor, j: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"select_col needs a 2-D tensor, got {a.shape}")

    def backward(g):
        a.grad[:, j] += g

    return _node(a.data[:, j].copy(), (a,), backward)


def take(a: Tensor, indices) -> Tensor:
    if a.data.ndim != 1:
        raise ShapeError(f"take needs a 1-D tensor, got {a.shape}")
    idx = np.asarray(indices, dtype=np.intp)

    def backward(g):
        np.add.at(a.grad, idx, g)

    return _node(a.data[idx].copy(), (a,), backward)


def take_rows(a: Tensor, cols) -> Tensor:
    """Per-row column gather: out[i] = a[i, cols[i]]."""
    if a.data.ndim != 2:
        raise ShapeError(f"take_rows needs a 2-D tensor, got {a.shape}")
    cols = np.asarray(cols, dtype=np.intp)
    rows = np.arange(a.data.shape[0])

    def backward(g):
        np.add.at(a.grad, (rows, cols), g)

    return _node(a.data[rows, cols].copy(), (a,), backward)


def colmul(a: Tensor, col: Tensor) -> Tensor:
    """Scale each row of a matrix by a per-row scalar."""
    if a.data.ndim != 2 or col.data.shape != (a.data.shape[0],):
        raise ShapeError(f"colmul shapes disagree: {a.shape} rows vs {col.shape}")

    def backward(g):
        a.grad += g * col.data[:, None]
        col.grad += (g * a.data).sum(axis=1)

    return _node(a.data * col.data[:, None], (a, col), backward)


def diag(a: Tensor) -> Tensor:
    if a.data.ndim != 2 or a.data.shape[0] != a.data.shape[1]:
        raise ShapeError(f"diag needs a square matrix, got {a.shape}")
    n = a.data.shape[0]

    def backward(g):
        a.grad[np.arange(n), np.arange(n)] += g

    return _node(np.diagonal(a.data).copy(), (a,), backward)


# -------------------------------------------------------- softmax family


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if np.any(np.isnan(x.data)):
        raise NumericError("softmax input contains NaN")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        x.grad += out_data * (g - inner)

    return _node(out_data, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if np.any(np.isnan(x.data)):
        raise NumericError("log_softmax input contains NaN")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def backward(g):
        sm = np.exp(out_data)
        x.grad += g - sm * g.sum(axis=axis, keepdims=True)

    return _node(out_data, (x,), backward)


def kl_div(target_probs: Tensor, log_probs: Tensor) -> Tensor:
    """KL(target || exp(log_probs)): sum over classes, mean over rows.

    target_probs must be valid distributions along the last axis;
    log_probs are log-probabilities of matching shape.
    """
    t, lp = target_probs.data, log_probs.data
    if t.shape != lp.shape:
        raise ShapeError(f"kl_div shapes disagree: {t.shape} vs {lp.shape}")
    if np.any(t < 0):
        raise ContractError("kl_div target contains negative probabilities")
    sums = t.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ContractError("kl_div target rows do not sum to 1 within 1e-6")
    nrows = 1 if t.ndim == 1 else t.shape[0]
    tlogt = np.where(t > 0, t * np.log(np.where(t > 0, t, 1.0)), 0.0)
    out_data = np.asarray((tlogt - t * lp).sum() / nrows)

    def backward(g):
        gs = float(g) / nrows
        logt = np.log(np.where(t > 0, t, 1.0))
        target_probs.grad += np.where(t > 0, (logt - lp + 1.0) * gs, 0.0)
        log_probs.grad += -t * gs

    return _node(out_data, (target_probs, log_probs), backward)


def l2_normalize(x: Tensor) -> Tensor:
    """Normalize a vector, or each row of a matrix, to unit L2 norm."""
    if x.data.ndim not in (1, 2):
        raise ShapeError(f"l2_normalize needs a 1-D/2-D tensor, got {x.shape}")
    norms = np.linalg.norm(x.data, axis=-1, keepdims=True)
    if np.any(norms <= 1e-12):
        raise NumericError("l2_normalize: vector norm below 1e-12")
    out_data = x.data / norms

    def backward(g):
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        x.grad += (g - out_data * inner) / norms

    return _node(out_data, (x,), backward)
