"""Raw numpy kernels for N-d convolution, its adjoint and max-pooling.

Every function here works on plain arrays laid out as (N, C, *spatial) and
knows nothing about tapes. Two convolution paths exist:

* ``direct``: a loop over kernel offsets, each offset a channel matmul.
  Handles any stride and is the reference path.
* ``fft``: stride-1 only; correlation through real FFTs. Much cheaper for the
  5x5x5 kernels of the grid network, agrees with ``direct`` to rounding.

``method="auto"`` picks ``fft`` for stride 1 and kernels with more than 27 taps.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np
import scipy.fft as sfft

FFT_MIN_TAPS = 28


def out_extent(size: int, k: int, stride: int, pad: int) -> int:
    n = (size + 2 * pad - k) // stride + 1
    if n < 1:
        raise ValueError(f"non-positive output extent for size={size} k={k} stride={stride} pad={pad}")
    return n


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    width = [(0, 0), (0, 0)] + [(pad, pad)] * (x.ndim - 2)
    return np.pad(x, width)


def _crop(x: np.ndarray, pad: int, sizes: Sequence[int]) -> np.ndarray:
    idx = (slice(None), slice(None)) + tuple(slice(pad, pad + s) for s in sizes)
    return x[idx]


def _window(offset: Sequence[int], outs: Sequence[int], stride: int):
    return (slice(None), slice(None)) + tuple(
        slice(a, a + stride * (o - 1) + 1, stride) for a, o in zip(offset, outs)
    )


def _pick(method: str, w: np.ndarray, stride: int) -> str:
    if method == "auto":
        taps = int(np.prod(w.shape[2:]))
        return "fft" if stride == 1 and taps >= FFT_MIN_TAPS else "direct"
    if method == "fft" and stride != 1:
        raise ValueError("fft convolution path requires stride 1")
    if method not in ("fft", "direct"):
        raise ValueError(f"unknown convolution method {method!r}")
    return method


# --------------------------------------------------------------------------
# direct path


def _taps_first(w):
    # (f, c, *k) -> contiguous (*k, f, c); strided weight slices make matmul skip BLAS
    return np.ascontiguousarray(np.moveaxis(w, (0, 1), (-2, -1)))


def _forward_direct(xp, w, stride, outs):
    n, c = xp.shape[:2]
    f = w.shape[0]
    wt = _taps_first(w)
    out = np.zeros((n, f, int(np.prod(outs))))
    for off in itertools.product(*(range(k) for k in w.shape[2:])):
        xs = xp[_window(off, outs, stride)].reshape(n, c, -1)
        out += np.matmul(wt[off], xs)
    return out.reshape((n, f) + tuple(outs))


def _backward_input_direct(g, w, stride, padded_sizes):
    n, f = g.shape[:2]
    c = w.shape[1]
    outs = g.shape[2:]
    gx = np.zeros((n, c) + tuple(padded_sizes))
    g2 = g.reshape(n, f, -1)
    # (f, c, *k) -> contiguous (*k, c, f)
    wt = np.ascontiguousarray(np.moveaxis(w, (1, 0), (-2, -1)))
    for off in itertools.product(*(range(k) for k in w.shape[2:])):
        gx[_window(off, outs, stride)] += np.matmul(wt[off], g2).reshape((n, c) + tuple(outs))
    return gx


def _backward_weight_direct(g, xp, kshape, stride):
    n, f = g.shape[:2]
    c = xp.shape[1]
    outs = g.shape[2:]
    gw = np.zeros((f, c) + tuple(kshape))
    g2 = g.reshape(n, f, -1)
    for off in itertools.product(*(range(k) for k in kshape)):
        xs = xp[_window(off, outs, stride)].reshape(n, c, -1)
        gw[(slice(None), slice(None)) + off] = np.tensordot(g2, xs, axes=([0, 2], [0, 2]))
    return gw


# --------------------------------------------------------------------------
# fft path (stride 1)


def _fft_shape(sizes):
    return tuple(sfft.next_fast_len(int(s), real=True) for s in sizes)


def _rfft(a, shape):
    """Forward real FFT over the trailing axes, zero-extended to ``shape``.

    Axes are transformed one at a time starting from the last so that a
    small kernel only grows one axis per pass.
    """
    d = len(shape)
    axes = tuple(range(a.ndim - d, a.ndim))
    if 2 * np.prod(a.shape[-d:]) >= np.prod(shape):
        return sfft.rfftn(a, s=shape, axes=axes)
    out = sfft.rfft(a, n=shape[-1], axis=-1)
    for i in range(d - 2, -1, -1):
        out = sfft.fft(out, n=shape[i], axis=a.ndim - d + i)
    return out


def _irfft(a, shape, keep):
    """Inverse of ``_rfft`` returning only the leading ``keep`` entries per axis."""
    d = len(shape)
    if 2 * np.prod(keep) >= np.prod(shape):
        out = sfft.irfftn(a, s=shape, axes=tuple(range(a.ndim - d, a.ndim)))
        return np.ascontiguousarray(out[(Ellipsis,) + tuple(slice(0, k) for k in keep)])
    out = a
    for i in range(d - 1):
        ax = a.ndim - d + i
        out = sfft.ifft(out, n=shape[i], axis=ax)
        out = out[(slice(None),) * ax + (slice(0, keep[i]),)]
    out = sfft.irfft(out, n=shape[-1], axis=-1)
    return np.ascontiguousarray(out[..., : keep[-1]])


def _mix(a, b, transpose_b: bool):
    """Per-frequency channel contraction.

    transpose_b=False: out[n, f] = sum_c a[n, c] * b[f, c]
    transpose_b=True:  out[n, c] = sum_f a[n, f] * b[f, c]
    """
    n = a.shape[0]
    k = a.shape[2:]
    a2 = a.reshape(n, a.shape[1], -1).transpose(2, 0, 1)
    b3 = b.reshape(b.shape[0], b.shape[1], -1)
    b2 = b3.transpose(2, 0, 1) if transpose_b else b3.transpose(2, 1, 0)
    out = np.matmul(a2, b2)  # (K, n, out_ch)
    return out.transpose(1, 2, 0).reshape((n, out.shape[2]) + k)


class _FFTContext:
    __slots__ = ("shape", "X", "Wc", "padded", "kshape", "pad", "in_sizes")


def _forward_fft(xp, w, outs, pad, in_sizes):
    ctx = _FFTContext()
    ctx.shape = _fft_shape(xp.shape[2:])
    ctx.X = _rfft(xp, ctx.shape)
    ctx.Wc = np.conj(_rfft(w, ctx.shape))
    ctx.padded = xp.shape[2:]
    ctx.kshape = w.shape[2:]
    ctx.pad = pad
    ctx.in_sizes = in_sizes
    y = _irfft(_mix(ctx.X, ctx.Wc, transpose_b=False), ctx.shape, outs)
    return y, ctx


def _backward_fft(g, ctx, need_input, need_weight):
    G = _rfft(g, ctx.shape)
    gx = gw = None
    if need_input:
        gxp = _irfft(_mix(G, np.conj(ctx.Wc), transpose_b=True), ctx.shape, ctx.padded)
        gx = np.ascontiguousarray(_crop(gxp, ctx.pad, ctx.in_sizes))
    if need_weight:
        n, f = G.shape[:2]
        c = ctx.X.shape[1]
        kk = G.shape[2:]
        # sum_n conj(G[n, f]) * X[n, c], batched over frequencies
        g2 = np.conj(G).reshape(n, f, -1).transpose(2, 1, 0)
        x2 = ctx.X.reshape(n, c, -1).transpose(2, 0, 1)
        m = np.matmul(g2, x2).transpose(1, 2, 0).reshape((f, c) + kk)
        gw = _irfft(m, ctx.shape, ctx.kshape)
    return gx, gw


class _DirectContext:
    __slots__ = ("xp", "w", "stride", "pad", "in_sizes")


# --------------------------------------------------------------------------
# public kernels


def conv_forward_ctx(x, w, stride=1, pad=0, method="auto"):
    """Cross-correlation with zero padding. x: (N,C,*S), w: (F,C,*K).

    Returns the output and an opaque context for ``conv_backward``.
    """
    if x.ndim != w.ndim:
        raise ValueError("input and weight rank differ")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, weight expects {w.shape[1]}")
    outs = [out_extent(s, k, stride, pad) for s, k in zip(x.shape[2:], w.shape[2:])]
    xp = _pad(x, pad)
    if _pick(method, w, stride) == "fft":
        return _forward_fft(xp, w, outs, pad, x.shape[2:])
    ctx = _DirectContext()
    ctx.xp, ctx.w, ctx.stride, ctx.pad, ctx.in_sizes = xp, w, stride, pad, x.shape[2:]
    return _forward_direct(xp, w, stride, outs), ctx


def conv_backward(g, ctx, need_input=True, need_weight=True):
    """Gradients of ``conv_forward_ctx`` w.r.t. input and weight (None if not needed)."""
    if isinstance(ctx, _FFTContext):
        return _backward_fft(g, ctx, need_input, need_weight)
    gx = gw = None
    if need_input:
        gxp = _backward_input_direct(g, ctx.w, ctx.stride, ctx.xp.shape[2:])
        gx = np.ascontiguousarray(_crop(gxp, ctx.pad, ctx.in_sizes))
    if need_weight:
        gw = _backward_weight_direct(g, ctx.xp, ctx.w.shape[2:], ctx.stride)
    return gx, gw


def conv_forward(x, w, stride=1, pad=0, method="auto"):
    return conv_forward_ctx(x, w, stride, pad, method)[0]


def conv_backward_input(g, w, in_sizes, stride=1, pad=0, method="auto"):
    """Adjoint of ``conv_forward`` with respect to its input."""
    in_sizes = tuple(in_sizes)
    if _pick(method, w, stride) == "fft":
        ctx = _FFTContext()
        ctx.padded = tuple(s + 2 * pad for s in in_sizes)
        ctx.shape = _fft_shape(ctx.padded)
        ctx.Wc = np.conj(_rfft(w, ctx.shape))
        ctx.kshape, ctx.pad, ctx.in_sizes = w.shape[2:], pad, in_sizes
        return _backward_fft(g, ctx, True, False)[0]
    gxp = _backward_input_direct(g, w, stride, [s + 2 * pad for s in in_sizes])
    return np.ascontiguousarray(_crop(gxp, pad, in_sizes))


def conv_backward_weight(g, x, kshape, stride=1, pad=0, method="auto"):
    """Gradient of ``conv_forward`` with respect to its weight."""
    xp = _pad(x, pad)
    probe = np.empty((1, 1) + tuple(kshape))
    if _pick(method, probe, stride) == "fft":
        ctx = _FFTContext()
        ctx.shape = _fft_shape(xp.shape[2:])
        ctx.X = _rfft(xp, ctx.shape)
        ctx.kshape = tuple(kshape)
        return _backward_fft(g, ctx, False, True)[1]
    return _backward_weight_direct(g, xp, kshape, stride)


def transposed_extent(size: int, k: int, stride: int, pad: int) -> int:
    n = (size - 1) * stride - 2 * pad + k
    if n < 1:
        raise ValueError("non-positive transposed-convolution output extent")
    return n


def maxpool_forward(x, k=2):
    """Non-overlapping max-pool. Returns (out, argmax index within each block)."""
    spatial = x.shape[2:]
    if any(s % k for s in spatial):
        raise ValueError(f"max-pool needs spatial extents divisible by {k}, got {tuple(spatial)}")
    n, c = x.shape[:2]
    d = len(spatial)
    shape = [n, c]
    for s in spatial:
        shape += [s // k, k]
    blocks = x.reshape(shape)
    # (n, c, o1, o2, ..., k1, k2, ...) with block elements in scan order
    order = [0, 1] + [2 + 2 * i for i in range(d)] + [3 + 2 * i for i in range(d)]
    blocks = blocks.transpose(order).reshape(n, c, *(s // k for s in spatial), k ** d)
    arg = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool_backward(g, arg, in_shape, k=2):
    n, c = in_shape[:2]
    spatial = in_shape[2:]
    d = len(spatial)
    blocks = np.zeros(g.shape + (k ** d,))
    np.put_along_axis(blocks, arg[..., None], g[..., None], axis=-1)
    blocks = blocks.reshape(g.shape + (k,) * d)
    order = [0, 1]
    for i in range(d):
        order += [2 + i, 2 + d + i]
    return blocks.transpose(order).reshape(in_shape)
