"""3D encoder-decoder over bilateral grids and its depth-map objective.

Each encoder block runs two sub-blocks (conv 5/1/2, ReLU, batch norm) and a
2x max-pool; a bridge block sits at the coarsest level; each decoder block
upsamples with a 4/2/1 transposed convolution, concatenates the matching
encoder output and runs two more sub-blocks. A 1x1x1 head maps back to one
grid per image channel and a sigmoid keeps the output in (0, 1).

Network tensors are laid out (N, C, W_g, H_g, B).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff.layers import BatchNorm, Conv, ConvTranspose, Module
from .grid import DenseGrid, GridParams, lift_gray, normalize, slice_weights, splat_index
from .imageio import GRAY_WEIGHTS, DepthMap, ImageGray, ImageRGB, to_gray


@dataclass(frozen=True)
class BGUNetConfig:
    in_channels: int = 3
    base_channels: int = 8
    depth: int = 2
    grid_params: GridParams = field(default_factory=GridParams)
    include_occupancy: bool = False
    relu_before_bn: bool = True
    loss_space: str = "map"  # "map": sliced depth map; "grid": splatted target grid

    def __post_init__(self):
        if self.in_channels not in (1, 3):
            raise ValueError("in_channels must be 1 (gray) or 3 (rgb)")
        if self.depth < 1 or self.base_channels < 1:
            raise ValueError("depth and base_channels must be >= 1")
        if self.loss_space not in ("map", "grid"):
            raise ValueError(f"unknown loss_space {self.loss_space!r}")

    def check_dims(self, dims) -> None:
        step = 2 ** self.depth
        bad = [d for d in dims if d % step]
        if bad:
            raise ValueError(f"grid extents {tuple(dims)} not divisible by 2^depth = {step}")

    @property
    def input_channels(self) -> int:
        return self.in_channels * (2 if self.include_occupancy else 1)


class SubBlock(Module):
    def __init__(self, rng, c_in, c_out, relu_before_bn=True):
        self.conv = Conv(rng, c_in, c_out, 5, 1, 2, spatial=3)
        self.bn = BatchNorm(c_out)
        self.relu_before_bn = relu_before_bn

    def __call__(self, x):
        y = self.conv(x)
        if self.relu_before_bn:
            return self.bn(ad.relu(y))
        return ad.relu(self.bn(y))


class Block(Module):
    def __init__(self, rng, c_in, c_out, relu_before_bn=True):
        self.sub1 = SubBlock(rng, c_in, c_out, relu_before_bn)
        self.sub2 = SubBlock(rng, c_out, c_out, relu_before_bn)

    def __call__(self, x):
        return self.sub2(self.sub1(x))


class UpBlock(Module):
    def __init__(self, rng, c_in, c_out, relu_before_bn=True):
        self.up = ConvTranspose(rng, c_in, c_out, 4, 2, 1, spatial=3)
        self.block = Block(rng, 2 * c_out, c_out, relu_before_bn)

    def __call__(self, x, skip):
        return self.block(ad.concat([self.up(x), skip], axis=1))


class BGUNet(Module):
    def __init__(self, cfg: BGUNetConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.Generator(np.random.Philox(seed))
        chans = [cfg.base_channels * 2 ** i for i in range(cfg.depth + 1)]
        rb = cfg.relu_before_bn
        c = cfg.input_channels
        self.enc = []
        for ch in chans[:-1]:
            self.enc.append(Block(rng, c, ch, rb))
            c = ch
        self.bridge = Block(rng, c, chans[-1], rb)
        self.dec = [UpBlock(rng, chans[i + 1], chans[i], rb) for i in reversed(range(cfg.depth))]
        self.head = Conv(rng, chans[0], cfg.in_channels, 1, 1, 0, spatial=3)
        self.assign_names()

    def logits(self, x: ad.Tensor) -> ad.Tensor:
        if x.ndim != 5 or x.shape[1] != self.cfg.input_channels:
            raise ValueError(f"expected (N, {self.cfg.input_channels}, W, H, B) input, got {x.shape}")
        self.cfg.check_dims(x.shape[2:])
        skips = []
        for block in self.enc:
            x = block(x)
            skips.append(x)
            x = ad.maxpool3d(x, 2)
        x = self.bridge(x)
        for up, skip in zip(self.dec, reversed(skips)):
            x = up(x, skip)
        return self.head(x)

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return ad.sigmoid(self.logits(x))


def build(cfg: BGUNetConfig, seed: int = 0, dims=None) -> BGUNet:
    if dims is not None:
        cfg.check_dims(dims)
    return BGUNet(cfg, seed)


# --------------------------------------------------------------------------
# inputs and outputs


def _channels(img: ImageGray | ImageRGB, in_channels: int) -> list[np.ndarray]:
    if in_channels == 1:
        gray = img if isinstance(img, ImageGray) else to_gray(img)
        return [gray.data]
    if isinstance(img, ImageGray):
        return [img.data] * 3
    return [img.data[:, :, i] for i in range(3)]


def image_grids(img: ImageGray | ImageRGB, cfg: BGUNetConfig) -> list[DenseGrid]:
    p = cfg.grid_params
    return [normalize(lift_gray(ImageGray(ch), p)) for ch in _channels(img, cfg.in_channels)]


def grids_to_array(grids: list[DenseGrid], include_occupancy: bool) -> np.ndarray:
    planes = [g.value for g in grids]
    if include_occupancy:
        planes += [g.occupancy.astype(np.float64) for g in grids]
    return np.stack(planes)


def input_tensor(images, cfg: BGUNetConfig) -> ad.Tensor:
    """Stack lifted, normalized grids of a batch of images into (N, C, W_g, H_g, B)."""
    arrs = [grids_to_array(image_grids(img, cfg), cfg.include_occupancy) for img in images]
    return ad.Tensor(np.stack(arrs))


def forward(model: BGUNet, grids: list[DenseGrid]) -> list[DenseGrid]:
    """Run one sample's per-channel grids through the network (no tape)."""
    x = ad.Tensor(grids_to_array(grids, model.cfg.include_occupancy)[None])
    y = model(x).data[0]
    return [DenseGrid.full(y[i]) for i in range(y.shape[0])]


def _slice_plan(images, cfg: BGUNetConfig, grid_dims):
    """Gather indices/weights slicing every (sample, channel) grid at its reference."""
    n = len(images)
    c = cfg.in_channels
    vol = int(np.prod(grid_dims))
    idx, wts = [], []
    for s, img in enumerate(images):
        for k, ref in enumerate(_channels(img, c)):
            i, w = slice_weights(ref, cfg.grid_params, grid_dims)
            idx.append(i + (s * c + k) * vol)
            wts.append(w)
    h, w_ = images[0].data.shape[:2]
    return np.concatenate(idx, axis=1), np.concatenate(wts, axis=1), (n, c, h, w_)


def geometry_tensor(out: ad.Tensor, images, cfg: BGUNetConfig) -> ad.Tensor:
    """Differentiable geometry map (N, 1, H, W) from network output grids."""
    idx, wts, shape = _slice_plan(images, cfg, out.shape[2:])
    sliced = ad.gather_weighted(out, idx, wts, shape)
    if cfg.in_channels == 1:
        return sliced
    return ad.sum(ad.mul(sliced, GRAY_WEIGHTS.reshape(1, 3, 1, 1)), axis=1, keepdims=True)


def geometry_map(out_grids: list[DenseGrid], reference: ImageGray | ImageRGB, p: GridParams) -> ImageGray:
    """Slice each output grid at its reference channel, then convert to gray."""
    refs = _channels(reference, len(out_grids)) if len(out_grids) in (1, 3) else None
    if refs is None:
        raise ValueError("expected 1 or 3 output grids")
    maps = []
    for g, ref in zip(out_grids, refs):
        i, w = slice_weights(ref, p, g.dims)
        maps.append(np.clip((w * g.value.reshape(-1)[i]).sum(axis=0), 0.0, 1.0).reshape(ref.shape))
    if len(maps) == 1:
        return ImageGray(maps[0])
    return to_gray(ImageRGB(np.stack(maps, axis=2)))


def predict_geometry(model: BGUNet, images) -> list[ImageGray]:
    """Geometry maps for a batch of images with the model in its current mode."""
    out = model(input_tensor(images, model.cfg))
    g = geometry_tensor(out, images, model.cfg).data
    return [ImageGray(np.clip(g[i, 0], 0.0, 1.0)) for i in range(len(images))]


def _targets(gts: list[DepthMap], depth_norm: float):
    t = np.stack([np.where(d.mask, d.data / depth_norm, 0.0) for d in gts])[:, None]
    m = np.stack([d.mask for d in gts])[:, None]
    if not m.any():
        raise ValueError("ground truth has no valid pixels")
    return t, m


def grid_target(img, gt: DepthMap, cfg: BGUNetConfig, depth_norm: float):
    """Ground truth splatted into the reference image's grid (grid-space loss variant)."""
    p = cfg.grid_params
    vals, occs = [], []
    norm = np.where(gt.mask, np.clip(gt.data / depth_norm, 0.0, 1.0), 0.0)
    for ref in _channels(img, cfg.in_channels):
        flat, dims = splat_index(ref, p)
        flat = flat[gt.mask]
        size = int(np.prod(dims))
        wsum = np.bincount(flat, minlength=size)
        vsum = np.bincount(flat, weights=norm[gt.mask], minlength=size)
        occ = wsum > 0
        v = np.zeros(size)
        np.divide(vsum, wsum, out=v, where=occ)
        vals.append(v.reshape(dims))
        occs.append(occ.reshape(dims))
    return np.stack(vals), np.stack(occs)


def loss(model: BGUNet, x: ad.Tensor, images, gts: list[DepthMap], depth_norm: float = 10.0) -> ad.Tensor:
    """Masked MSE between the predicted geometry map and normalized depth."""
    out = model(x)
    if model.cfg.loss_space == "grid":
        pairs = [grid_target(img, gt, model.cfg, depth_norm) for img, gt in zip(images, gts)]
        t = np.stack([p[0] for p in pairs])
        m = np.stack([p[1] for p in pairs])
        if not m.any():
            raise ValueError("ground truth has no valid pixels")
        return ad.mse(out, t, m)
    t, m = _targets(gts, depth_norm)
    return ad.mse(geometry_tensor(out, images, model.cfg), t, m)
