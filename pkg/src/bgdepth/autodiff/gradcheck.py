"""Central finite-difference checks against tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def numeric_grad(f: Callable[[], Tensor], t: Tensor, eps: float = 1e-5) -> np.ndarray:
    """(f(x+eps) - f(x-eps)) / 2eps for every element of ``t``, evaluated without a tape."""
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f().item()
        flat[i] = old - eps
        lo = f().item()
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the larger of the two gradients' max magnitudes."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Relative error between tape and finite-difference gradients.

    ``f(*inputs)`` must return a scalar tensor. Every input with
    ``requires_grad`` is checked; its ``data`` array is perturbed in place and
    restored. The error is taken over all checked inputs at once: a tensor
    whose true gradient is exactly zero (a conv bias feeding a training-mode
    batch norm) would otherwise divide rounding noise by nothing.
    """
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.grad = None
    with Tape() as tape:
        loss = f(*inputs)
    tape.backward(loss)
    analytic, numeric = [], []
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic.append((t.grad if t.grad is not None else np.zeros_like(t.data)).ravel())
        numeric.append(numeric_grad(lambda: f(*inputs), t, eps).ravel())
    if not analytic:
        return 0.0
    return relative_error(np.concatenate(analytic), np.concatenate(numeric))
