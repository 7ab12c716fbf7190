"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"BGDC"  u16 version
    u32 n + n bytes   config echo (key=value text, UTF-8)
    u32 n + n bytes   RNG state (JSON, UTF-8)
    u64               step counter
    u32               tensor count, then per tensor:
        u16 n + n bytes name, u8 dtype tag (0 = f32, 1 = f64), u8 ndim,
        ndim x u32 shape, payload

Parameters are stored as float32 (they are kept float32-representable, so
this is lossless); batch-norm buffers, optimizer moments and the loss log as
float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig, arch_mismatch, parse_text, to_text

MAGIC = b"BGDC"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


@dataclass(eq=False)
class Checkpoint:
    config: TrainConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: str = "{}"
    step: int = 0
    epoch_loss: list[float] = field(default_factory=list)
    step_loss: list[float] = field(default_factory=list)

    def check_compatible(self, cfg: TrainConfig) -> None:
        diff = arch_mismatch(self.config, cfg)
        if diff:
            raise CheckpointError("checkpoint config conflicts with requested config: " + "; ".join(diff))


def _tensors(ck: Checkpoint):
    for name, a in ck.params.items():
        if not np.array_equal(np.asarray(a, np.float32).astype(np.float64), a):
            raise CheckpointError(f"parameter {name} is not float32-representable")
        yield "param/" + name, 0, a
    for group, d in (("buffer/", ck.buffers), ("adam.m/", ck.adam_m), ("adam.v/", ck.adam_v)):
        for name, a in d.items():
            yield group + name, 1, a
    yield "log/epoch_loss", 1, np.asarray(ck.epoch_loss, dtype=np.float64)
    yield "log/step_loss", 1, np.asarray(ck.step_loss, dtype=np.float64)


def _blob(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


def to_bytes(ck: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<H", VERSION), _blob(to_text(ck.config).encode("utf-8")),
             _blob(ck.rng_state.encode("utf-8")), struct.pack("<Q", ck.step)]
    tensors = list(_tensors(ck))
    parts.append(struct.pack("<I", len(tensors)))
    for name, tag, a in tensors:
        a = np.ascontiguousarray(a, dtype=_DTYPES[tag])
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<BB", tag, a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self) -> bytes:
        (n,) = self.unpack("<I")
        return self.take(n)


def from_bytes(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    cfg = parse_text(r.blob().decode("utf-8"))
    rng_state = r.blob().decode("utf-8")
    (step,) = r.unpack("<Q")
    (count,) = r.unpack("<I")
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "buffer": {}, "adam.m": {}, "adam.v": {}, "log": {}}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8")
        tag, ndim = r.unpack("<BB")
        if tag not in _DTYPES:
            raise CheckpointError(f"{name}: unknown dtype tag {tag}")
        shape = r.unpack(f"<{ndim}I")
        dt = _DTYPES[tag]
        a = np.frombuffer(r.take(int(np.prod(shape)) * dt.itemsize), dtype=dt).reshape(shape)
        group, _, key = name.partition("/")
        if group not in groups:
            raise CheckpointError(f"unknown tensor group in {name!r}")
        groups[group][key] = a.astype(np.float64)
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return Checkpoint(
        config=cfg, params=groups["param"], buffers=groups["buffer"],
        adam_m=groups["adam.m"], adam_v=groups["adam.v"], rng_state=rng_state, step=step,
        epoch_loss=[float(x) for x in groups["log"].get("epoch_loss", [])],
        step_loss=[float(x) for x in groups["log"].get("step_loss", [])],
    )


def save_checkpoint(ck: Checkpoint, path) -> None:
    Path(path).write_bytes(to_bytes(ck))


def load_checkpoint(path, expect: TrainConfig | None = None) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"{path}: {e}") from e
    ck = from_bytes(buf)
    if expect is not None:
        ck.check_compatible(expect)
    return ck
