"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery to train the toy diffusion transformer: a ``Tensor``
wrapping an ndarray, a handful of differentiable ops (linear layers,
attention building blocks, norms), and a straight-through ternary linear
whose backward routes the quantized-weight gradient onto the full-precision
master weights.

Graphs are built eagerly; ``Tensor.backward()`` runs a topological sweep.
Wrap inference in ``no_grad()`` to skip graph construction entirely.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import ternary as tq

__all__ = [
    "Tensor",
    "no_grad",
    "add",
    "mul",
    "matmul",
    "linear",
    "ternary_linear",
    "ternary_matmul",
    "reshape",
    "transpose",
    "narrow",
    "tsum",
    "tmean",
    "silu",
    "softmax",
    "rms_norm",
    "embedding",
]

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """An ndarray plus an optional gradient and backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor; defaults to d(self)/d(self) = 1."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        self.grad = np.asarray(grad, dtype=self.data.dtype)

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def item(self) -> float:
        return float(self.data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _as_operand(x, like: np.ndarray) -> Tensor:
    """Wrap a constant operand, matching scalar dtype to the other side."""
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if arr.ndim == 0 and np.issubdtype(like.dtype, np.floating) and arr.dtype != like.dtype:
        arr = arr.astype(like.dtype)
    return Tensor(arr)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient over the axes that were broadcast in the forward."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    if isinstance(a, Tensor):
        a, b = a, _as_operand(b, a.data)
    else:
        b = _as_tensor(b)
        a = _as_operand(a, b.data)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    if isinstance(a, Tensor):
        a, b = a, _as_operand(b, a.data)
    else:
        b = _as_tensor(b)
        a = _as_operand(a, b.data)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), backward)


def linear(x, w, bias=None) -> Tensor:
    """Dense affine map: x @ w^T + bias, for x of shape (..., in_features)."""
    x, w = _as_tensor(x), _as_tensor(w)
    bias = _as_tensor(bias) if bias is not None else None
    n = w.data.shape[1]
    x2 = x.data.reshape(-1, n)
    y2 = x2 @ w.data.T
    if bias is not None:
        y2 = y2 + bias.data
    data = y2.reshape(*x.data.shape[:-1], w.data.shape[0])

    def backward(g):
        g2 = g.reshape(-1, w.data.shape[0])
        if x.requires_grad:
            x._accumulate((g2 @ w.data).reshape(x.data.shape))
        if w.requires_grad:
            w._accumulate(g2.T @ x2)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(data, parents, backward)


def ternary_matmul(x2: np.ndarray, codes: np.ndarray, alpha: float, bias: np.ndarray | None) -> np.ndarray:
    """Plain-numpy forward of a ternary layer: x @ (alpha*codes)^T + bias.

    Shared by the training path (codes freshly quantized from masters) and
    the packed deployment path (codes unpacked from storage), so the two
    produce bit-identical outputs for identical codes and alpha.
    """
    wt = np.asarray(alpha, dtype=x2.dtype) * codes.astype(x2.dtype)
    y = x2 @ wt.T
    if bias is not None:
        y = y + bias
    return y


def ternary_linear(x, w, alpha, bias=None, cfg: tq.QuantConfig = tq.DEFAULT_QUANT_CONFIG) -> Tensor:
    """Quantize-on-forward linear layer with straight-through backward.

    Forward ternarizes the master weights ``w`` (shape (out, in)) and applies
    alpha * codes. Backward sends the effective-weight gradient unchanged to
    ``w`` (STE) and the exact linear-in-alpha gradient to ``alpha``.
    """
    x, w, alpha = _as_tensor(x), _as_tensor(w), _as_tensor(alpha)
    bias = _as_tensor(bias) if bias is not None else None
    t = tq.ternarize(w.data, float(alpha.data), cfg)
    n = w.data.shape[1]
    x2 = x.data.reshape(-1, n)
    y2 = ternary_matmul(x2, t.codes, float(alpha.data), bias.data if bias is not None else None)
    data = y2.reshape(*x.data.shape[:-1], w.data.shape[0])
    codes_f = t.codes.astype(x.data.dtype)

    def backward(g):
        g2 = g.reshape(-1, w.data.shape[0])
        if x.requires_grad:
            wt = np.asarray(float(alpha.data), dtype=x.data.dtype) * codes_f
            x._accumulate((g2 @ wt).reshape(x.data.shape))
        if w.requires_grad or alpha.requires_grad:
            grad_wtilde = g2.T @ x2
            grad_w, grad_alpha = tq.ste_backward(grad_wtilde, t)
            if w.requires_grad:
                w._accumulate(grad_w)
            if alpha.requires_grad:
                alpha._accumulate(np.asarray(grad_alpha, dtype=alpha.data.dtype))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))

    parents = (x, w, alpha) if bias is None else (x, w, alpha, bias)
    return _make(data, parents, backward)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    data = x.data.reshape(shape)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.data.shape))

    return _make(data, (x,), backward)


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    data = x.data.transpose(axes)
    inverse = np.argsort(axes)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.transpose(inverse))

    return _make(data, (x,), backward)


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Slice ``length`` entries starting at ``start`` along ``axis``."""
    x = _as_tensor(x)
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    data = x.data[index]

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[index] = g
            x._accumulate(full)

    return _make(data, (x,), backward)


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if x.requires_grad:
            if axis is None:
                x._accumulate(np.broadcast_to(g, x.data.shape).astype(x.data.dtype))
            else:
                g_exp = g if keepdims else np.expand_dims(g, axis)
                x._accumulate(np.broadcast_to(g_exp, x.data.shape).astype(x.data.dtype))

    return _make(data, (x,), backward)


def tmean(x, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else np.prod(
        [x.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def backward(g):
        if x.requires_grad:
            scaled = g / x.data.dtype.type(count)
            if axis is None:
                x._accumulate(np.broadcast_to(scaled, x.data.shape).astype(x.data.dtype))
            else:
                g_exp = scaled if keepdims else np.expand_dims(scaled, axis)
                x._accumulate(np.broadcast_to(g_exp, x.data.shape).astype(x.data.dtype))

    return _make(data, (x,), backward)


def silu(x) -> Tensor:
    x = _as_tensor(x)
    # exp(-|x|) <= 1 keeps the sigmoid overflow-free at any input magnitude
    z = np.exp(-np.abs(x.data))
    s = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    data = x.data * s

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (s * (1.0 + x.data * (1.0 - s))))

    return _make(data, (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * data).sum(axis=axis, keepdims=True)
            x._accumulate(data * (g - dot))

    return _make(data, (x,), backward)


def rms_norm(x, gain, eps: float) -> Tensor:
    """Root-mean-square normalization over the last axis, with a gain vector.

    y_i = gain_i * x_i / sqrt(mean_j(x_j^2) + eps)
    """
    x, gain = _as_tensor(x), _as_tensor(gain)
    n = x.data.shape[-1]
    ms = (x.data * x.data).mean(axis=-1, keepdims=True)
    r = 1.0 / np.sqrt(ms + x.data.dtype.type(eps))
    u = x.data * r
    data = u * gain.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * u, gain.data.shape))
        if x.requires_grad:
            gg = g * gain.data
            dot = (gg * x.data).sum(axis=-1, keepdims=True)
            x._accumulate(gg * r - x.data * (r**3) * (dot / x.data.dtype.type(n)))

    return _make(data, (x, gain), backward)


def embedding(table, idx: np.ndarray) -> Tensor:
    """Row lookup: out[k] = table[idx[k]]."""
    table = _as_tensor(table)
    idx = np.asarray(idx)
    data = table.data[idx]

    def backward(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, idx, g)
            table._accumulate(gt)

    return _make(data, (table,), backward)
