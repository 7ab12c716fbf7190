"""Tensor, Tape and Param: the reverse-mode differentiation core.

Operations record onto the innermost active :class:`Tape`. Outside any tape
they run as plain numpy computations (inference), which keeps frozen models
read-only and safe to share.

    with Tape() as tape:
        loss = mse(model(x), target)
    tape.backward(loss)
"""

from __future__ import annotations

import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np


class TapeError(RuntimeError):
    """Misuse of a tape: non-scalar loss, foreign loss, or a consumed tape."""


_ACTIVE: contextvars.ContextVar[tuple] = contextvars.ContextVar("bgdepth_tapes", default=())


class Tensor:
    """Dense float array with an optional gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim > 5:
            raise ValueError(f"tensor rank {arr.ndim} exceeds 5")
        if 0 in arr.shape:
            raise ValueError(f"tensor extents must be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar; the implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        from . import ops
        return ops.add(self, ops.mul(other, -1.0))

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


class Param(Tensor):
    """A trainable leaf tensor with a dotted name inside its model."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of executed operations.

    A tape is single-use: after :meth:`backward` its saved contexts are
    released and a second call raises :class:`TapeError`.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._consumed = False
        self._token = None

    def __enter__(self) -> "Tape":
        if self._consumed:
            raise TapeError("cannot record on a consumed tape")
        self._token = _ACTIVE.set(_ACTIVE.get() + (self,))
        return self

    def __exit__(self, *exc):
        _ACTIVE.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self._nodes)

    def record(self, out: Tensor, parents: Sequence[Tensor], backward: Callable):
        self._nodes.append(_Node(out, tuple(parents), backward))
        out._tape = self

    def backward(self, loss: Tensor, grad: np.ndarray | None = None):
        if self._consumed:
            raise TapeError("tape already consumed by a previous backward call")
        if loss.size != 1 and grad is None:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeError("loss was not recorded on this tape")
        self._consumed = True
        grads = {id(loss): np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.data.dtype)}
        for node in reversed(self._nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            pgrads = node.backward(g)
            for parent, pg in zip(node.parents, pgrads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._tape is self:
                    key = id(parent)
                    grads[key] = grads[key] + pg if key in grads else pg
                else:
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
        self._nodes.clear()


def active_tape() -> Tape | None:
    stack = _ACTIVE.get()
    return stack[-1] if stack else None


def backward(loss: Tensor):
    """Back-propagate a scalar loss through the tape that produced it."""
    if loss._tape is None:
        raise TapeError("loss was not produced on a tape")
    loss._tape.backward(loss)


def make_result(data: np.ndarray, parents: Iterable[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result, recording it when a tape is active and any parent needs gradients.

    ``backward_fn(grad_out)`` must return one gradient (or None) per parent.
    """
    parents = tuple(parents)
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, backward_fn)
    return out
