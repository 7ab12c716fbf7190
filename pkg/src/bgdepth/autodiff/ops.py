"""Differentiable operations.

Each op computes its forward result with numpy and hands
:func:`make_result` a closure that maps the output gradient to one gradient
per input. Inputs that do not require gradients get ``None``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import conv as K
from .tensor import Tensor, as_tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise and reductions


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return make_result(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return make_result(out, (a, b), backward)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(out, (x,), backward)


def mean(x: Tensor) -> Tensor:
    return mul(sum(x), 1.0 / x.size)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so neither branch overflows
    z = x.data
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_result(s, (x,), lambda g: (g * s * (1.0 - s),))


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(x.shape, ref)) if i != axis % len(ref)):
            raise ValueError(f"concat shape mismatch: {ref} vs {x.shape} along axis {axis}")
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) if x.requires_grad else None
            for i, x in enumerate(xs)
        )

    return make_result(out, xs, backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous sub-range ``[start, start+length)`` along ``axis``."""
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = x.data[idx].copy()

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return make_result(out, (x,), backward)


def split(x: Tensor, sizes: Sequence[int], axis: int = 1) -> list[Tensor]:
    if int(np.sum(sizes)) != x.shape[axis]:
        raise ValueError(f"split sizes {list(sizes)} do not cover extent {x.shape[axis]}")
    out, start = [], 0
    for s in sizes:
        out.append(narrow(x, axis, start, s))
        start += s
    return out


def mse(pred: Tensor, target, mask=None) -> Tensor:
    """Mean squared error; with ``mask`` the mean runs over masked-in elements only."""
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.data.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target
    if mask is None:
        m = None
        n = diff.size
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), diff.shape)
        n = int(m.sum())
        if n == 0:
            raise ValueError("mse over an empty mask")
        diff = np.where(m, diff, 0.0)
    value = np.array(np.sum(diff * diff) / n)

    return make_result(value, (pred,), lambda g: (g * 2.0 * diff / n,))


def gather_weighted(x: Tensor, index: np.ndarray, weight: np.ndarray, shape) -> Tensor:
    """out.flat[p] = sum_k weight[k, p] * x.flat[index[k, p]].

    The interpolation weights are constants; gradients reach ``x`` only.
    """
    flat = x.data.reshape(-1)
    out = np.einsum("kp,kp->p", weight, flat[index]).reshape(shape)
    idx = index.ravel()

    def backward(g):
        contrib = (weight * g.reshape(1, -1)).ravel()
        return (np.bincount(idx, weights=contrib, minlength=flat.size).reshape(x.shape),)

    return make_result(out, (x,), backward)


# --------------------------------------------------------------------------
# convolutions


def _conv(x, w, b, stride, pad, spatial, method):
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != spatial + 2 or w.ndim != spatial + 2:
        raise ValueError(f"expected rank-{spatial + 2} input and weight, got {x.shape} and {w.shape}")
    y, ctx = K.conv_forward_ctx(x.data, w.data, stride, pad, method)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias shape {b.shape} does not match {w.shape[0]} filters")
        y += b.data.reshape((1, -1) + (1,) * spatial)
        parents.append(b)

    def backward(g):
        gx, gw = K.conv_backward(g, ctx, x.requires_grad, w.requires_grad)
        out = [gx, gw]
        if b is not None:
            out.append(g.sum(axis=(0,) + tuple(range(2, g.ndim))) if b.requires_grad else None)
        return tuple(out)

    return make_result(y, parents, backward)


def conv3d(x, w, b=None, stride: int = 1, pad: int = 0, method: str = "auto") -> Tensor:
    return _conv(x, w, b, stride, pad, 3, method)


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0, method: str = "auto") -> Tensor:
    return _conv(x, w, b, stride, pad, 2, method)


def _conv_transpose(x, w, b, stride, pad, spatial, method):
    """Adjoint of the strided convolution; ``w`` is laid out (C_in, C_out, *K)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != spatial + 2 or w.ndim != spatial + 2:
        raise ValueError(f"expected rank-{spatial + 2} input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, weight expects {w.shape[0]}")
    ks = w.shape[2:]
    sizes = [K.transposed_extent(s, k, stride, pad) for s, k in zip(x.shape[2:], ks)]
    for s, k, o in zip(sizes, ks, x.shape[2:]):
        if K.out_extent(s, k, stride, pad) != o:
            raise ValueError("transposed convolution configuration is not invertible")
    y = K.conv_backward_input(x.data, w.data, sizes, stride, pad, method)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ValueError(f"bias shape {b.shape} does not match {w.shape[1]} output channels")
        y = y + b.data.reshape((1, -1) + (1,) * spatial)
        parents.append(b)

    def backward(g):
        gx = gw = None
        if x.requires_grad:
            gx = K.conv_forward(g, w.data, stride, pad, method)
        if w.requires_grad:
            # the forward conv maps g -> x, so its weight gradient pairs x with g
            gw = K.conv_backward_weight(x.data, g, ks, stride, pad, method)
        out = [gx, gw]
        if b is not None:
            out.append(g.sum(axis=(0,) + tuple(range(2, g.ndim))) if b.requires_grad else None)
        return tuple(out)

    return make_result(y, parents, backward)


def conv_transpose3d(x, w, b=None, stride: int = 2, pad: int = 1, method: str = "auto") -> Tensor:
    return _conv_transpose(x, w, b, stride, pad, 3, method)


def conv_transpose2d(x, w, b=None, stride: int = 2, pad: int = 1, method: str = "auto") -> Tensor:
    return _conv_transpose(x, w, b, stride, pad, 2, method)


# --------------------------------------------------------------------------
# pooling and normalization


def _maxpool(x, k, spatial):
    x = as_tensor(x)
    if x.ndim != spatial + 2:
        raise ValueError(f"expected rank-{spatial + 2} input, got {x.shape}")
    out, arg = K.maxpool_forward(x.data, k)
    return make_result(out, (x,), lambda g: (K.maxpool_backward(g, arg, x.shape, k),))


def maxpool3d(x, kernel: int = 2) -> Tensor:
    return _maxpool(x, kernel, 3)


def maxpool2d(x, kernel: int = 2) -> Tensor:
    return _maxpool(x, kernel, 2)


BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Per-channel normalization over batch and spatial axes.

    In training mode the running statistics are updated in place (unbiased
    variance, as is conventional); eval mode reads them.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[1]
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    count = x.size // c
    if training:
        if count < 2:
            raise ValueError(f"batch norm in training mode needs >= 2 samples per channel, got {count}")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / (count - 1)
    else:
        mu, var = running_mean.copy(), running_var.copy()
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        gg = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gb = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(bshape)
            if training:
                m1 = gxhat.mean(axis=axes, keepdims=True)
                m2 = (gxhat * xhat).mean(axis=axes, keepdims=True)
                gx = (gxhat - m1 - xhat * m2) * inv.reshape(bshape)
            else:
                gx = gxhat * inv.reshape(bshape)
        return gx, gg, gb

    return make_result(out, (x, gamma, beta), backward)


batchnorm3d = batch_norm
batchnorm2d = batch_norm
