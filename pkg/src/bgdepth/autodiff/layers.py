"""Small parameter containers used by both networks."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import Param, Tensor


def f32(a: np.ndarray) -> np.ndarray:
    """Round to float32 precision but keep float64 storage.

    Parameters always hold float32-representable values so that float32
    checkpoints are lossless.
    """
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return f32(rng.uniform(-bound, bound, size=shape))


class Module:
    """Named tree of Params, buffers and child modules."""

    training = True

    def named_children(self) -> Iterator[tuple[str, "Module"]]:
        for k, v in vars(self).items():
            if isinstance(v, Module):
                yield k, v
            elif isinstance(v, (list, tuple)):
                for i, m in enumerate(v):
                    if isinstance(m, Module):
                        yield f"{k}{i}", m

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for k, v in vars(self).items():
            if isinstance(v, Param):
                yield prefix + k, v
        for name, child in self.named_children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for k, v in getattr(self, "_buffers", {}).items():
            yield prefix + k, v
        for name, child in self.named_children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self) -> list[Param]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self):
        for name, p in self.named_parameters():
            p.name = name
        return self

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self.named_children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


class Conv(Module):
    def __init__(self, rng, c_in, c_out, k, stride=1, pad=0, spatial=3):
        fan_in = c_in * k ** spatial
        self.weight = Param(he_uniform(rng, (c_out, c_in) + (k,) * spatial, fan_in))
        self.bias = Param(np.zeros(c_out))
        self.stride, self.pad, self.spatial = stride, pad, spatial

    def __call__(self, x: Tensor) -> Tensor:
        fn = ops.conv3d if self.spatial == 3 else ops.conv2d
        return fn(x, self.weight, self.bias, self.stride, self.pad)


class ConvTranspose(Module):
    def __init__(self, rng, c_in, c_out, k=4, stride=2, pad=1, spatial=3):
        fan_in = c_in * k ** spatial
        self.weight = Param(he_uniform(rng, (c_in, c_out) + (k,) * spatial, fan_in))
        self.bias = Param(np.zeros(c_out))
        self.stride, self.pad, self.spatial = stride, pad, spatial

    def __call__(self, x: Tensor) -> Tensor:
        fn = ops.conv_transpose3d if self.spatial == 3 else ops.conv_transpose2d
        return fn(x, self.weight, self.bias, self.stride, self.pad)


class BatchNorm(Module):
    def __init__(self, channels: int):
        self.gamma = Param(np.ones(channels))
        self.beta = Param(np.zeros(channels))
        self._buffers = {"running_mean": np.zeros(channels), "running_var": np.ones(channels)}

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self._buffers["running_mean"],
                              self._buffers["running_var"], self.training)


def load_state(module: Module, params: dict, buffers: dict):
    """Copy named arrays into a module, checking names and shapes exactly."""
    own = dict(module.named_parameters())
    if set(own) != set(params):
        missing = sorted(set(own) - set(params))
        extra = sorted(set(params) - set(own))
        raise ValueError(f"parameter names differ (missing={missing[:5]}, unexpected={extra[:5]})")
    for name, p in own.items():
        arr = np.asarray(params[name], dtype=np.float64)
        if arr.shape != p.shape:
            raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
        p.data = arr.copy()
    own_b = dict(module.named_buffers())
    if set(own_b) != set(buffers):
        raise ValueError(f"buffer names differ: {sorted(set(own_b) ^ set(buffers))[:5]}")
    for name, buf in own_b.items():
        if np.shape(buffers[name]) != buf.shape:
            raise ValueError(f"shape mismatch for buffer {name}")
        buf[...] = buffers[name]
