"""A small reverse-mode autodiff tensor over numpy float64 arrays.

Every op records its parents and a closure that pushes the output gradient
back to them. ``Tensor.backward`` walks the graph in reverse topological
order. Only the ops the models need are provided.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
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
        self._accum(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # intermediate gradients are not needed once propagated
                    node.grad = None

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)


class Parameter(Tensor):
    """A leaf tensor that keeps its gradient."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return Tensor(a.data + b.data, _parents=(a, b), _backward=back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return Tensor(a.data * b.data, _parents=(a, b), _backward=back)


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, _parents=(a,), _backward=lambda g: a._accum(-g))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor(a.data.reshape(shape), _parents=(a,), _backward=lambda g: a._accum(g.reshape(old)))


def getitem(a: Tensor, idx) -> Tensor:
    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accum(full)

    return Tensor(a.data[idx], _parents=(a,), _backward=back)


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0, *sizes])

    def back(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors), _backward=back)


def stack(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def back(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accum(np.take(g, i, axis=axis))

    return Tensor(np.stack([t.data for t in tensors], axis=axis), _parents=tuple(tensors), _backward=back)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]

    def back(g):
        gg = g if axis is None else np.expand_dims(g, axis)
        a._accum(np.broadcast_to(gg / n, a.shape))

    return Tensor(a.data.mean(axis=axis), _parents=(a,), _backward=back)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor(np.where(mask, a.data, 0.0), _parents=(a,), _backward=lambda g: a._accum(g * mask))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor(out, _parents=(a,), _backward=lambda g: a._accum(g * out * (1.0 - out)))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor(out, _parents=(a,), _backward=lambda g: a._accum(g * (1.0 - out * out)))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for x of shape (N, in) and weight (out, in)."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        if x.requires_grad:
            x._accum(g @ weight.data)
        if weight.requires_grad:
            weight._accum(g.T @ x.data)
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=0))

    return Tensor(out, _parents=parents, _backward=back)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x (N, C, L) with weight (O, C, K)."""
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} does not match weight {weight.shape}")
    n, c, length = x.shape
    o, _, k = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    lp = length + 2 * padding
    if lp < k:
        raise ShapeError("conv1d: kernel longer than padded input")
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]  # (N, C, Lout, K)
    lout = win.shape[2]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(n * lout, c * k)
    w2 = weight.data.reshape(o, c * k)
    out = (cols @ w2.T).reshape(n, lout, o).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias.data[None, :, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        g2 = g.transpose(0, 2, 1).reshape(n * lout, o)
        if weight.requires_grad:
            weight._accum((g2.T @ cols).reshape(o, c, k))
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(n, lout, c, k)
            dxp = np.zeros((n, c, lp))
            span = stride * (lout - 1) + 1
            for j in range(k):
                dxp[:, :, j : j + span : stride] += dcols[:, :, :, j].transpose(0, 2, 1)
            x._accum(dxp[:, :, padding : padding + length] if padding else dxp)

    return Tensor(np.ascontiguousarray(out), _parents=parents, _backward=back)


def batchnorm(x: Tensor, training: bool, state: dict, eps: float = 1e-5, momentum: float = 0.1) -> Tensor:
    """Channel-wise normalization of x (N, C, L) over (n, l), without affine terms.

    ``state`` holds ``running_mean`` and ``running_var`` (length C). In
    training mode the batch statistics (biased variance) are used and the
    running statistics move by an exponential moving average; in eval mode the
    running statistics are used.
    """
    if x.ndim != 3:
        raise ShapeError("batchnorm expects (N, C, L)")
    n, c, length = x.shape
    if training:
        m = n * length
        if m < 2:
            raise ShapeError("batchnorm in training mode needs N*L >= 2")
        mu = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        unbiased = var * m / (m - 1)
        state["running_mean"] = (1 - momentum) * state["running_mean"] + momentum * mu
        state["running_var"] = (1 - momentum) * state["running_var"] + momentum * unbiased
    else:
        mu, var = state["running_mean"], state["running_var"]
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None]) * inv[None, :, None]

    def back(g):
        if not x.requires_grad:
            return
        if training:
            gm = g.mean(axis=(0, 2), keepdims=True)
            gxm = (g * xhat).mean(axis=(0, 2), keepdims=True)
            x._accum(inv[None, :, None] * (g - gm - xhat * gxm))
        else:
            x._accum(g * inv[None, :, None])

    return Tensor(xhat, _parents=(x,), _backward=back)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels, weights=None) -> Tensor:
    """Weighted mean cross-entropy: sum_i w[y_i] * ce_i / sum_i w[y_i]."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError("labels must have one entry per row of logits")
    w = np.ones(k) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (k,):
        raise ShapeError(f"class weights must have length {k}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    ce = logsum - z[np.arange(n), labels]
    wi = w[labels]
    total = wi.sum()
    loss = float((wi * ce).sum() / total)

    def back(g):
        p = np.exp(z - logsum[:, None])
        p[np.arange(n), labels] -= 1.0
        logits._accum(g * p * (wi / total)[:, None])

    return Tensor(loss, _parents=(logits,), _backward=back)
