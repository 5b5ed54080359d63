"""Reverse-mode automatic differentiation over dense numpy arrays.

Deliberately minimal: exactly the operations the pose-regression topologies
need (conv2d, 2x2 max pooling, dense, concat, relu, flatten). Arrays are
row-major; activations default to float32 with float64 accumulation in
reductions. Gradient-check tests run everything in float64.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested operation."""


_FLOAT_DTYPES = (np.float32, np.float64)


def _as_float(data, dtype=None):
    arr = np.asarray(data)
    if dtype is None:
        dtype = arr.dtype if arr.dtype in _FLOAT_DTYPES else np.float32
    return np.ascontiguousarray(arr, dtype=dtype)


class Tensor:
    """N-dimensional value with a lazily allocated same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_float(data, dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self, grad=None):
        """Backpropagate through the recorded tape starting from this tensor."""
        if grad is None:
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise ShapeMismatch(
                f"output gradient shape {grad.shape} != value shape {self.data.shape}"
            )

        order = []
        seen = set()
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
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _result(data, parents, backward):
    out = Tensor(data, dtype=data.dtype)
    tracked = tuple(p for p in parents if p.requires_grad or p._parents)
    if tracked:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def conv2d(x: Tensor, weights: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an NCHW batch with OIHW kernels."""
    n, c, h, w = x.shape
    out_c, in_c, kh, kw = weights.shape
    if in_c != c:
        raise ShapeMismatch(f"conv2d: input has {c} channels, kernel expects {in_c}")
    if bias.shape != (out_c,):
        raise ShapeMismatch(f"conv2d: bias shape {bias.shape} != ({out_c},)")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeMismatch("conv2d: kernel larger than padded input")
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))

    # one shifted tensordot per kernel tap beats materializing im2col columns
    def tap(i, j):
        return xp[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride]

    y = np.zeros((n, out_h, out_w, out_c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            y += np.tensordot(tap(i, j), weights.data[:, :, i, j], axes=([1], [1]))
    y += bias.data

    def backward(grad):
        gout = np.ascontiguousarray(grad.transpose(0, 2, 3, 1))  # (N, Ho, Wo, outC)
        bias._accumulate(
            gout.reshape(-1, out_c).sum(axis=0, dtype=np.float64).astype(bias.dtype)
        )
        gcols = (gout.reshape(-1, out_c) @ weights.data.reshape(out_c, -1)).reshape(
            n, out_h, out_w, c, kh, kw
        )
        gw = np.empty_like(weights.data)
        # NHWC scatter keeps the per-tap accumulation permutation-free
        gxp = np.zeros((n, h + 2 * padding, w + 2 * padding, c), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                gw[:, :, i, j] = np.tensordot(gout, tap(i, j), axes=([0, 1, 2], [0, 2, 3]))
                gxp[:, i : i + stride * out_h : stride, j : j + stride * out_w : stride, :] += (
                    gcols[:, :, :, :, i, j]
                )
        weights._accumulate(gw)
        if padding:
            gxp = gxp[:, padding : padding + h, padding : padding + w, :]
        x._accumulate(np.ascontiguousarray(gxp.transpose(0, 3, 1, 2)))

    return _result(np.ascontiguousarray(y.transpose(0, 3, 1, 2)), (x, weights, bias), backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; odd edges padded with -inf.

    The backward pass routes each window's gradient to the first index that
    attains the maximum (row-major within the window).
    """
    n, c, h, w = x.shape
    ph, pw = h % 2, w % 2
    xp = x.data
    if ph or pw:
        xp = np.pad(xp, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
    out_h, out_w = xp.shape[2] // 2, xp.shape[3] // 2
    windows = xp.reshape(n, c, out_h, 2, out_w, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, out_h, out_w, 4
    )
    idx = windows.argmax(axis=-1)
    y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(grad):
        gwin = np.zeros_like(windows)
        np.put_along_axis(gwin, idx[..., None], grad[..., None], axis=-1)
        gxp = gwin.reshape(n, c, out_h, out_w, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, out_h * 2, out_w * 2
        )
        x._accumulate(gxp[:, :, :h, :w])

    return _result(np.ascontiguousarray(y), (x,), backward)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map of a flattened (N, D) batch; weights are (D, M)."""
    if x.data.ndim != 2:
        raise ShapeMismatch(f"dense: expected a flattened (N, D) input, got {x.shape}")
    d, m = weights.shape
    if x.shape[1] != d:
        raise ShapeMismatch(f"dense: input length {x.shape[1]} != weight rows {d}")
    if bias.shape != (m,):
        raise ShapeMismatch(f"dense: bias shape {bias.shape} != ({m},)")
    y = x.data @ weights.data + bias.data

    def backward(grad):
        weights._accumulate(x.data.T @ grad)
        bias._accumulate(grad.sum(axis=0, dtype=np.float64).astype(bias.dtype))
        x._accumulate(grad @ weights.data.T)

    return _result(y, (x, weights, bias), backward)


def concat(a: Tensor, b: Tensor, axis: int = 1) -> Tensor:
    """Concatenate two tensors; the backward pass splits the gradient."""
    sa, sb = list(a.shape), list(b.shape)
    if len(sa) != len(sb):
        raise ShapeMismatch(f"concat: rank mismatch {a.shape} vs {b.shape}")
    axis = axis % len(sa)
    sa[axis] = sb[axis] = -1
    if sa != sb:
        raise ShapeMismatch(f"concat: shapes {a.shape} and {b.shape} differ off axis {axis}")
    split = a.shape[axis]
    y = np.concatenate([a.data, b.data], axis=axis)

    def backward(grad):
        ga, gb = np.split(grad, [split], axis=axis)
        a._accumulate(ga)
        b._accumulate(gb)

    return _result(y, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0)

    def backward(grad):
        x._accumulate(grad * (x.data > 0))

    return _result(y, (x,), backward)


def flatten(x: Tensor) -> Tensor:
    """Collapse all non-batch dimensions, (N, ...) -> (N, D)."""
    n = x.shape[0]
    y = x.data.reshape(n, -1)

    def backward(grad):
        x._accumulate(grad.reshape(x.shape))

    return _result(y, (x,), backward)
