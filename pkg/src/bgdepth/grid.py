"""Bilateral grids: lifting (splat), normalization, trilinear slicing and blur.

Grid arrays are indexed ``[a, b, c]`` = (x cell, y cell, range bin) and have
shape ``(W_g, H_g, B)``. A pixel at column x, row y with intensity v lands in
voxel ``(round(x/sr_s), round(y/sr_s), round(v*(B-1)))`` with ties away from
zero; spatial indices clamp to the grid.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imageio import ImageGray, ImageRGB, round_half_away

GRID_MAGIC = b"BGRD"
GRID_VERSION = 1


@dataclass(frozen=True)
class GridParams:
    sr_s: int = 2
    n_bins: int = 16

    def __post_init__(self):
        if int(self.sr_s) != self.sr_s or self.sr_s < 1:
            raise ValueError(f"sr_s must be a positive integer, got {self.sr_s}")
        if int(self.n_bins) != self.n_bins or self.n_bins < 2:
            raise ValueError(f"n_bins must be an integer >= 2, got {self.n_bins}")

    def dims(self, width: int, height: int) -> tuple[int, int, int]:
        return (math.ceil(width / self.sr_s), math.ceil(height / self.sr_s), self.n_bins)

    @property
    def sr_r(self) -> float:
        """Range sampling step in normalized intensity units."""
        return 1.0 / (self.n_bins - 1)


@dataclass(eq=False)
class BilateralGrid:
    value_sum: np.ndarray
    weight: np.ndarray
    # per-voxel range of splatted intensities; known right after a lift, lost by blurring
    value_min: np.ndarray | None = None
    value_max: np.ndarray | None = None

    def __post_init__(self):
        self.value_sum = np.asarray(self.value_sum, dtype=np.float64)
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.value_sum.shape != self.weight.shape or self.weight.ndim != 3:
            raise ValueError("value_sum and weight must be equal-shaped 3D arrays")
        if (self.value_min is None) != (self.value_max is None):
            raise ValueError("value_min and value_max come together")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.weight.shape

    def summary(self) -> str:
        occ = float((self.weight > 0).mean())
        w, h, b = self.dims
        return (f"dims={w}x{h}x{b}\noccupancy={occ:.6f}\n"
                f"weight_total={self.weight.sum():.17g}\nvalue_total={self.value_sum.sum():.17g}")


@dataclass(eq=False)
class DenseGrid:
    value: np.ndarray
    occupancy: np.ndarray

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.value.shape

    @classmethod
    def full(cls, value: np.ndarray) -> "DenseGrid":
        value = np.asarray(value, dtype=np.float64)
        return cls(value, np.ones(value.shape, dtype=bool))


def cell_indices(n: int, sr_s: int, cells: int) -> np.ndarray:
    return np.clip(round_half_away(np.arange(n) / sr_s).astype(np.int64), 0, cells - 1)


def bin_index(values: np.ndarray, n_bins: int) -> np.ndarray:
    return np.clip(round_half_away(np.asarray(values) * (n_bins - 1)).astype(np.int64), 0, n_bins - 1)


def splat_index(reference: np.ndarray, p: GridParams) -> tuple[np.ndarray, tuple[int, int, int]]:
    """Flat voxel index receiving each pixel of a (H, W) intensity array."""
    h, w = reference.shape
    dims = p.dims(w, h)
    ax = cell_indices(w, p.sr_s, dims[0])
    by = cell_indices(h, p.sr_s, dims[1])
    flat = (ax[None, :] * dims[1] + by[:, None]) * dims[2] + bin_index(reference, p.n_bins)
    return flat, dims


def lift_gray(img: ImageGray, p: GridParams) -> BilateralGrid:
    flat, dims = splat_index(img.data, p)
    flat = flat.ravel()
    v = img.data.ravel()
    size = int(np.prod(dims))
    weight = np.bincount(flat, minlength=size).astype(np.float64)
    value = np.bincount(flat, weights=v, minlength=size)
    vmin = np.full(size, np.inf)
    vmax = np.full(size, -np.inf)
    np.minimum.at(vmin, flat, v)
    np.maximum.at(vmax, flat, v)
    return BilateralGrid(value.reshape(dims), weight.reshape(dims), vmin.reshape(dims), vmax.reshape(dims))


def lift_rgb(img: ImageRGB, p: GridParams) -> tuple[BilateralGrid, BilateralGrid, BilateralGrid]:
    return tuple(lift_gray(img.channel(i), p) for i in range(3))


def normalize(g: BilateralGrid) -> DenseGrid:
    occ = g.weight > 0
    value = np.zeros_like(g.value_sum)
    np.divide(g.value_sum, g.weight, out=value, where=occ)
    if g.value_min is not None:
        # a mean lies within its samples' range; clamping also makes single-valued voxels exact
        value = np.where(occ, np.clip(value, g.value_min, g.value_max), 0.0)
    return DenseGrid(value, occ)


def slice_weights(reference: np.ndarray, p: GridParams, dims) -> tuple[np.ndarray, np.ndarray]:
    """Trilinear corner indices (flat, into a ``dims`` grid) and weights per pixel.

    Returns ``(index, weight)``, each of shape (8, H*W). Coordinates are
    (x/sr_s, y/sr_s, v*(B-1)) clamped to the grid's interpolation range.
    """
    h, w = reference.shape
    if tuple(dims) != p.dims(w, h):
        raise ValueError(f"grid dims {tuple(dims)} do not match reference {w}x{h} under {p}")
    gw, gh, gb = dims
    fx = np.clip(np.arange(w) / p.sr_s, 0, gw - 1)
    fy = np.clip(np.arange(h) / p.sr_s, 0, gh - 1)
    fz = np.clip(reference * (gb - 1), 0, gb - 1).ravel()
    fx = np.broadcast_to(fx[None, :], (h, w)).ravel()
    fy = np.broadcast_to(fy[:, None], (h, w)).ravel()
    corners = []
    for f, n in ((fx, gw), (fy, gh), (fz, gb)):
        i0 = np.minimum(np.floor(f).astype(np.int64), n - 1)
        i1 = np.minimum(i0 + 1, n - 1)
        t = f - i0
        corners.append(((i0, 1.0 - t), (i1, t)))
    index = np.empty((8, h * w), dtype=np.int64)
    weight = np.empty((8, h * w))
    k = 0
    for ia, wa in corners[0]:
        for ib, wb in corners[1]:
            for ic, wc in corners[2]:
                index[k] = (ia * gh + ib) * gb + ic
                weight[k] = wa * wb * wc
                k += 1
    return index, weight


def slice(g: DenseGrid, reference: ImageGray, p: GridParams) -> ImageGray:  # noqa: A001
    """Read a 2D map out of a grid at (x, y, reference(x, y)).

    Interpolation weights of unoccupied corners are dropped and the rest
    renormalized, so empty voxels never bleed zeros into the result. For a
    fully occupied grid this is plain trilinear interpolation.
    """
    index, weight = slice_weights(reference.data, p, g.dims)
    wts = weight * g.occupancy.reshape(-1)[index]
    vals = g.value.reshape(-1)[index]
    total = wts.sum(axis=0)
    # interpolate offsets from the heaviest corner so equal corners reproduce their value exactly
    anchor = vals[wts.argmax(axis=0), np.arange(vals.shape[1])]
    num = (wts * (vals - anchor)).sum(axis=0)
    out = np.zeros_like(total)
    np.divide(num, total, out=out, where=total > 0)
    out = np.where(total > 0, anchor + out, 0.0)
    return ImageGray(np.clip(out, 0.0, 1.0).reshape(reference.data.shape))


# --------------------------------------------------------------------------
# blur and the classic filter


def gaussian_spread_matrix(n: int, sigma: float) -> np.ndarray:
    """Column j spreads unit mass from cell j with a 3-sigma truncated Gaussian.

    Each column is renormalized over the cells inside the axis, so total mass
    is conserved exactly, including at the borders.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return np.eye(n)
    radius = math.ceil(3 * sigma)
    i = np.arange(n)
    d = i[:, None] - i[None, :]
    m = np.where(np.abs(d) <= radius, np.exp(-0.5 * (d / sigma) ** 2), 0.0)
    return m / m.sum(axis=0, keepdims=True)


def _blur_array(a: np.ndarray, mats) -> np.ndarray:
    for axis, m in enumerate(mats):
        a = np.moveaxis(np.tensordot(m, a, axes=([1], [axis])), 0, axis)
    return a


def grid_blur(g: BilateralGrid, sigma_s: float, sigma_r: float) -> BilateralGrid:
    """Separable homogeneous Gaussian blur of value_sum and weight."""
    w, h, b = g.dims
    mats = (gaussian_spread_matrix(w, sigma_s), gaussian_spread_matrix(h, sigma_s),
            gaussian_spread_matrix(b, sigma_r))
    return BilateralGrid(_blur_array(g.value_sum, mats), _blur_array(g.weight, mats))


def bilateral_filter(img: ImageGray, p: GridParams, sigma_s: float, sigma_r: float) -> ImageGray:
    return slice(normalize(grid_blur(lift_gray(img, p), sigma_s, sigma_r)), img, p)


# --------------------------------------------------------------------------
# dump format: magic, u16 version, 3 x u32 dims, float64 value_sum then weight


def write_grid(g: BilateralGrid, path) -> None:
    head = GRID_MAGIC + struct.pack("<H3I", GRID_VERSION, *g.dims)
    body = g.value_sum.astype("<f8").tobytes() + g.weight.astype("<f8").tobytes()
    Path(path).write_bytes(head + body)


def read_grid(path) -> BilateralGrid:
    buf = Path(path).read_bytes()
    if buf[:4] != GRID_MAGIC:
        raise ValueError(f"{path}: not a grid dump")
    version, w, h, b = struct.unpack_from("<H3I", buf, 4)
    if version != GRID_VERSION:
        raise ValueError(f"{path}: unsupported grid dump version {version}")
    n = w * h * b
    off = 4 + struct.calcsize("<H3I")
    if len(buf) != off + 16 * n:
        raise ValueError(f"{path}: truncated grid dump")
    vals = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(w, h, b)
    wts = np.frombuffer(buf, dtype="<f8", count=n, offset=off + 8 * n).reshape(w, h, b)
    return BilateralGrid(vals.astype(np.float64), wts.astype(np.float64))
