"""Image and depth-map types plus binary Netpbm (P5/P6) I/O.

Intensities are floats in [0, 1]. Depth maps are stored as 16-bit PGM whose
integers are multiplied by a scale read from a ``key=value`` sidecar; the
integer 0 marks an invalid pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])
DEFAULT_DEPTH_SCALE = 1.0 / 1000.0


class ImageFormatError(ValueError):
    """Base class for Netpbm decoding failures."""


class MalformedHeaderError(ImageFormatError):
    pass


class TruncatedPayloadError(ImageFormatError):
    pass


class UnsupportedMagicError(ImageFormatError):
    pass


class DepthFormatError(ValueError):
    pass


def _frozen(a: np.ndarray, dtype=np.float64) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ImageGray:
    data: np.ndarray  # (height, width)

    def __post_init__(self):
        a = _frozen(self.data)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"ImageGray needs a non-empty 2D array, got shape {a.shape}")
        if not np.all((a >= 0.0) & (a <= 1.0)):
            raise ValueError("ImageGray values must lie in [0, 1]")
        object.__setattr__(self, "data", a)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class ImageRGB:
    data: np.ndarray  # (height, width, 3)

    def __post_init__(self):
        a = _frozen(self.data)
        if a.ndim != 3 or a.shape[2] != 3 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"ImageRGB needs an (H, W, 3) array, got shape {a.shape}")
        if not np.all((a >= 0.0) & (a <= 1.0)):
            raise ValueError("ImageRGB values must lie in [0, 1]")
        object.__setattr__(self, "data", a)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def channel(self, i: int) -> ImageGray:
        return ImageGray(self.data[:, :, i])


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Metric depth with a per-pixel validity mask."""

    data: np.ndarray  # (height, width), meters
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        a = _frozen(self.data)
        if a.ndim != 2 or a.size == 0:
            raise ValueError(f"DepthMap needs a non-empty 2D array, got shape {a.shape}")
        m = np.isfinite(a) & (a > 0) if self.mask is None else np.asarray(self.mask, dtype=bool)
        if m.shape != a.shape:
            raise ValueError(f"mask shape {m.shape} differs from depth shape {a.shape}")
        if np.any(~np.isfinite(a[m])) or np.any(a[m] <= 0):
            raise ValueError("valid depths must be finite and strictly positive")
        object.__setattr__(self, "data", a)
        object.__setattr__(self, "mask", _frozen(m, dtype=bool))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def round_half_away(x):
    """Round to nearest with ties away from zero (np.round rounds ties to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def to_gray(img: ImageRGB) -> ImageGray:
    g = img.data @ GRAY_WEIGHTS
    # weights sum to 1, so only rounding can push a value out of range
    return ImageGray(np.clip(g, 0.0, 1.0))


def to_rgb(img: ImageGray) -> ImageRGB:
    return ImageRGB(np.repeat(img.data[:, :, None], 3, axis=2))


# --------------------------------------------------------------------------
# Netpbm codec


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise MalformedHeaderError("unexpected end of header")
    return buf[start:pos], pos


def decode_pnm(buf: bytes) -> tuple[np.ndarray, int]:
    """Decode a binary P5/P6 payload into raw integers (H, W) or (H, W, 3) and maxval."""
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise UnsupportedMagicError(f"unsupported magic number {magic!r}; only P5 and P6 are read")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise MalformedHeaderError(f"non-numeric header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"invalid dimensions {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise MalformedHeaderError(f"maxval {maxval} outside 1..65535")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise MalformedHeaderError("missing whitespace after maxval")
    pos += 1
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * channels * dtype.itemsize
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, expected {need}")
    arr = np.frombuffer(payload, dtype=dtype).astype(np.int64)
    if np.any(arr > maxval):
        raise ImageFormatError("sample exceeds maxval")
    shape = (height, width, 3) if channels == 3 else (height, width)
    return arr.reshape(shape), maxval


def encode_pnm(raw: np.ndarray, maxval: int) -> bytes:
    raw = np.asarray(raw)
    if raw.ndim == 2:
        magic = b"P5"
    elif raw.ndim == 3 and raw.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot encode array of shape {raw.shape}")
    if not 1 <= maxval <= 65535:
        raise ValueError(f"maxval {maxval} outside 1..65535")
    if raw.min() < 0 or raw.max() > maxval:
        raise ValueError("samples outside [0, maxval]")
    dtype = ">u2" if maxval > 255 else "u1"
    header = b"%s\n%d %d\n%d\n" % (magic, raw.shape[1], raw.shape[0], maxval)
    return header + raw.astype(dtype).tobytes()


def quantize(values: np.ndarray, maxval: int) -> np.ndarray:
    return round_half_away(np.asarray(values) * maxval).astype(np.int64)


def load_image(path) -> ImageRGB:
    """Read a P6 or P5 file; grayscale is promoted by channel replication."""
    raw, maxval = decode_pnm(Path(path).read_bytes())
    data = raw / maxval
    if data.ndim == 2:
        data = np.repeat(data[:, :, None], 3, axis=2)
    return ImageRGB(data)


def load_gray(path) -> ImageGray:
    """Read a P5 file (or a P6 file, converted with the luma weights)."""
    raw, maxval = decode_pnm(Path(path).read_bytes())
    if raw.ndim == 3:
        return to_gray(ImageRGB(raw / maxval))
    return ImageGray(raw / maxval)


def save_image(img: ImageGray | ImageRGB, path, maxval: int = 255) -> None:
    data = np.asarray(img.data)
    Path(path).write_bytes(encode_pnm(quantize(data, maxval), maxval))


# --------------------------------------------------------------------------
# depth


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".txt")


def read_keyvalue(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}: expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


def _read_scale(path) -> float:
    side = sidecar_path(path)
    if not side.exists():
        return DEFAULT_DEPTH_SCALE
    kv = read_keyvalue(side)
    try:
        scale = float(kv.get("scale", DEFAULT_DEPTH_SCALE))
    except ValueError as e:
        raise DepthFormatError(f"{side}: bad scale value") from e
    if not scale > 0:
        raise DepthFormatError(f"{side}: depth scale must be positive, got {scale}")
    return scale


def load_depth(path) -> DepthMap:
    path = Path(path)
    try:
        raw, maxval = decode_pnm(path.read_bytes())
    except ImageFormatError as e:
        raise DepthFormatError(f"{path}: {e}") from e
    if raw.ndim != 2:
        raise DepthFormatError(f"{path}: depth must be a single-channel PGM")
    scale = _read_scale(path)
    mask = raw > 0
    return DepthMap(np.where(mask, raw * scale, 0.0), mask)


def save_depth(depth: DepthMap, path, scale: float = DEFAULT_DEPTH_SCALE) -> None:
    if not scale > 0:
        raise DepthFormatError(f"depth scale must be positive, got {scale}")
    q = round_half_away(np.where(depth.mask, depth.data, 0.0) / scale)
    if np.any(q[depth.mask] > 65535):
        raise DepthFormatError(f"depth exceeds {65535 * scale:g} m at scale {scale:g}")
    # a tiny but valid depth must not collapse onto the invalid sentinel
    q = np.where(depth.mask, np.maximum(q, 1), 0).astype(np.int64)
    path = Path(path)
    path.write_bytes(encode_pnm(q, 65535))
    sidecar_path(path).write_text(f"scale={scale!r}\n", encoding="utf-8")
