"""Minimal reverse-mode autodiff over dense float64 arrays, plus Adam.

Graphs are built eagerly: every operator evaluates its forward value on
construction and records a vector-Jacobian product. Node ids come from a
global monotone counter, so creation order is a valid topological order.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_ids = itertools.count()


class ShapeError(ValueError):
    """Operator inputs have incompatible shapes."""


class NonFiniteError(ValueError):
    """NaN or Inf crossed a graph boundary."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "id", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, op="leaf", parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = op
        self.id = next(_ids)
        self._parents: tuple[Tensor, ...] = tuple(parents)
        self._vjp = vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(id={self.id}, op={self.op}, shape={self.shape})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Create a leaf tensor. Non-finite values are rejected."""
    arr = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("non-finite value in input tensor")
    return Tensor(arr, requires_grad=requires_grad)


def _node(op, value, parents, vjp) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(value, requires_grad=req, op=op, parents=parents, vjp=vjp if req else None)


def _shape_fail(op, msg):
    # the node that failed would have received the next id
    raise ShapeError(f"{op} (node {next(_ids)}): {msg}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- operators

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        _shape_fail("matmul", f"{a.shape} @ {b.shape}")
    A, B = a.data, b.data
    return _node("matmul", A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        _shape_fail("add", f"{a.shape} + {b.shape}")
    sa, sb = a.shape, b.shape
    return _node("add", out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        _shape_fail("mul", f"{a.shape} * {b.shape}")
    A, B = a.data, b.data
    return _node("mul", out, (a, b),
                 lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-feature (dense) or per-channel (conv) bias along axis 1."""
    if b.data.ndim != 1 or x.data.ndim < 2 or x.shape[1] != b.shape[0]:
        _shape_fail("bias_add", f"x {x.shape}, bias {b.shape}")
    bshape = (1, -1) + (1,) * (x.data.ndim - 2)
    axes = tuple(i for i in range(x.data.ndim) if i != 1)
    return _node("bias_add", x.data + b.data.reshape(bshape), (x, b),
                 lambda g: (g, g.sum(axis=axes)))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _node("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def flatten(x: Tensor) -> Tensor:
    shape = x.shape
    return _node("flatten", x.data.reshape(shape[0], -1), (x,), lambda g: (g.reshape(shape),))


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        _shape_fail("reshape", f"{src} -> {shape}")
    return _node("reshape", out, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        _shape_fail("transpose", f"{x.shape}")
    return _node("transpose", x.data.T, (x,), lambda g: (g.T,))


def take(x: Tensor, start: int, stop: int, shape=None) -> Tensor:
    """Contiguous slice [start, stop) of a 1-d tensor, optionally reshaped."""
    if x.data.ndim != 1 or not 0 <= start <= stop <= x.shape[0]:
        _shape_fail("take", f"[{start}:{stop}] of {x.shape}")
    n = x.shape[0]
    out = x.data[start:stop]
    if shape is not None:
        out = out.reshape(shape)

    def vjp(g):
        full = np.zeros(n)
        full[start:stop] = g.reshape(-1)
        return (full,)

    return _node("take", out, (x,), vjp)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        _shape_fail("concat", str([p.shape for p in parts]))
    splits = np.cumsum([p.data.shape[axis] for p in parts])[:-1]
    return _node("concat", out, tuple(parts), lambda g: tuple(np.split(g, splits, axis=axis)))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _node("sum", np.sum(x.data), (x,), lambda g: (np.full(shape, float(g)),))


def conv2d(x: Tensor, w: Tensor, padding: str = "valid") -> Tensor:
    """Stride-1 cross-correlation. x: (B, C, H, W); w: (O, C, k, k)."""
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        _shape_fail("conv2d", f"x {x.shape}, w {w.shape}")
    k = w.shape[2]
    if padding == "same":
        if k % 2 == 0:
            _shape_fail("conv2d", "same padding needs an odd kernel")
        pad = k // 2
    elif padding == "valid":
        pad = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    if x.shape[2] + 2 * pad < k or x.shape[3] + 2 * pad < k:
        _shape_fail("conv2d", f"input {x.shape[2:]} smaller than kernel {k}")
    X, W = x.data, w.data
    xp = np.pad(X, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else X
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # B, C, Ho, Wo, k, k
    out = np.tensordot(win, W, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def vjp(g):
        dw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        gp = np.pad(g, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
        gwin = sliding_window_view(gp, (k, k), axis=(2, 3))
        dxp = np.tensordot(gwin, W[:, :, ::-1, ::-1], axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
        if pad:
            dxp = dxp[:, :, pad:-pad, pad:-pad]
        return dxp, dw

    return _node("conv2d", np.ascontiguousarray(out), (x, w), vjp)


def conv2d_out_size(size: int, k: int, padding: str) -> int:
    return size if padding == "same" else size - k + 1


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pool, stride 2; trailing odd rows/cols are dropped. Ties go to the first max."""
    if x.data.ndim != 4 or x.shape[2] < 2 or x.shape[3] < 2:
        _shape_fail("maxpool2", f"{x.shape}")
    B, C, H, W = x.shape
    h2, w2 = H // 2, W // 2
    blocks = (x.data[:, :, : 2 * h2, : 2 * w2]
              .reshape(B, C, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, h2, w2, 4))
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        sel = np.zeros((B, C, h2, w2, 4))
        np.put_along_axis(sel, arg[..., None], g[..., None], axis=-1)
        dx = np.zeros((B, C, H, W))
        dx[:, :, : 2 * h2, : 2 * w2] = (sel.reshape(B, C, h2, w2, 2, 2)
                                        .transpose(0, 1, 2, 4, 3, 5).reshape(B, C, 2 * h2, 2 * w2))
        return (dx,)

    return _node("maxpool2", out, (x,), vjp)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean categorical cross-entropy of integer labels under softmax(logits)."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],) or logits.shape[0] == 0:
        _shape_fail("softmax_ce", f"logits {logits.shape}, labels {labels.shape}")
    if labels.dtype.kind not in "iu" or labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("labels must be integers in [0, n_classes)")
    logp = log_softmax(logits.data)
    n = labels.shape[0]
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def vjp(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (float(g) / n),)

    return _node("softmax_ce", loss, (logits,), vjp)


def custom(inputs: Sequence[Tensor], value: np.ndarray,
           vjp: Callable[[np.ndarray], tuple]) -> Tensor:
    """Hook node: caller supplies the forward value and its vector-Jacobian product."""
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NonFiniteError("custom node produced non-finite values")
    return _node("custom", value, tuple(inputs), vjp)


# ---------------------------------------------------------------- backward

def _backprop(root: Tensor, seed: np.ndarray) -> dict[int, np.ndarray]:
    order: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if t.id in order or not t.requires_grad:
            continue
        order[t.id] = t
        stack.extend(t._parents)

    pending: dict[int, list[tuple[int, np.ndarray]]] = {root.id: [(-1, seed)]}
    grads: dict[int, np.ndarray] = {}
    for nid in sorted(order, reverse=True):
        node = order[nid]
        contribs = pending.pop(nid, None)
        if contribs is None:
            continue
        contribs.sort(key=lambda c: c[0])
        g = contribs[0][1]
        for _, extra in contribs[1:]:
            g = g + extra
        grads[nid] = g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if parent.requires_grad and pg is not None:
                pending.setdefault(parent.id, []).append((nid, np.asarray(pg, dtype=np.float64)))
    for nid, g in grads.items():
        node = order[nid]
        if node.op == "leaf":
            node.grad = g
    return grads


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar loss; returns node id -> gradient.

    Leaf tensors with ``requires_grad`` also get their ``.grad`` set.
    Contributions from several consumers are summed in ascending consumer id.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    return _backprop(loss, np.ones_like(loss.data))


def vjp(output: Tensor, cotangent: np.ndarray) -> dict[int, np.ndarray]:
    """Backward sweep from a non-scalar output seeded with ``cotangent``."""
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if cotangent.shape != output.shape:
        raise ShapeError(f"cotangent {cotangent.shape} vs output {output.shape}")
    if not output.requires_grad:
        return {}
    return _backprop(output, cotangent)


def finite_diff_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(a, b) -> float:
    """||a - b|| / max(||a||, ||b||); 0 when both vanish."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **kw) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), **kw)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState,
              lr: float) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Returns new params and new state."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ShapeError(f"adam: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    b1, b2 = state.beta1, state.beta2
    t = state.step + 1
    m = b1 * state.m + (1 - b1) * grads
    v = b2 * state.v + (1 - b2) * grads * grads
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, t, b1, b2, state.eps)
