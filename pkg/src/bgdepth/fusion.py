"""Depth refinement from geometry, segmentation and edge maps.

The refinement network is a 2D UNet whose encoder is a stack of residual
stages (each stage halves the resolution) and whose decoder upsamples with
4/2/1 transposed convolutions and skip concatenations. Inputs are assembled
channel-first in a fixed order: geometry (or RGB) | segmentation | edge.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import KMeans

from . import autodiff as ad
from .autodiff.layers import BatchNorm, Conv, ConvTranspose, Module
from .imageio import DepthMap, ImageGray, ImageRGB, to_gray
from .metrics import sobel_magnitude


class AblationMode(str, enum.Enum):
    FULL = "full"
    RGB_SEG_EDGE = "rgb_seg_edge"
    RGB_SEG = "rgb_seg"
    RGB_EDGE = "rgb_edge"

    @property
    def channels(self) -> int:
        return {"full": 5, "rgb_seg_edge": 5, "rgb_seg": 6, "rgb_edge": 4}[self.value]

    @property
    def uses_geometry(self) -> bool:
        return self is AblationMode.FULL

    @property
    def label(self) -> str:
        return {"full": "Ours", "rgb_seg_edge": "RGB+Seg+Edge", "rgb_seg": "RGB+Seg",
                "rgb_edge": "RGB+Edge"}[self.value]


@dataclass(frozen=True)
class FusionInput:
    geometry: ImageGray | None
    segmentation: ImageRGB | None
    edge: ImageGray | None
    rgb: ImageRGB | None = None

    def shape(self) -> tuple[int, int]:
        shapes = {m.data.shape[:2] for m in (self.geometry, self.segmentation, self.edge, self.rgb)
                  if m is not None}
        if len(shapes) != 1:
            raise ValueError(f"fusion inputs disagree on dimensions: {sorted(shapes)}")
        return shapes.pop()


def assemble_array(inp: FusionInput, mode: AblationMode) -> np.ndarray:
    """(C, H, W) channel stack for one sample."""
    mode = AblationMode(mode)
    inp.shape()

    def need(x, what):
        if x is None:
            raise ValueError(f"mode {mode.value} needs a {what} map")
        return x

    planes = []
    if mode is AblationMode.FULL:
        planes.append(need(inp.geometry, "geometry").data[None])
    elif mode is AblationMode.RGB_SEG_EDGE:
        # luma of the RGB image takes the single geometry slot; keeps the 5-channel layout
        planes.append(to_gray(need(inp.rgb, "rgb")).data[None])
    else:
        planes.append(need(inp.rgb, "rgb").data.transpose(2, 0, 1))
    if mode in (AblationMode.FULL, AblationMode.RGB_SEG_EDGE, AblationMode.RGB_SEG):
        planes.append(need(inp.segmentation, "segmentation").data.transpose(2, 0, 1))
    if mode in (AblationMode.FULL, AblationMode.RGB_SEG_EDGE, AblationMode.RGB_EDGE):
        planes.append(need(inp.edge, "edge").data[None])
    out = np.concatenate(planes, axis=0)
    assert out.shape[0] == mode.channels
    return out


def assemble(inp: FusionInput | list[FusionInput], mode: AblationMode) -> ad.Tensor:
    """Channel-axis concatenation laid out (N, C, H, W)."""
    items = inp if isinstance(inp, (list, tuple)) else [inp]
    return ad.Tensor(np.stack([assemble_array(i, mode) for i in items]))


def split_channels(x: np.ndarray, mode: AblationMode) -> list[np.ndarray]:
    """Inverse of ``assemble_array`` for one (C, H, W) stack: the channel groups in order."""
    mode = AblationMode(mode)
    sizes = {AblationMode.FULL: [1, 3, 1], AblationMode.RGB_SEG_EDGE: [1, 3, 1],
             AblationMode.RGB_SEG: [3, 3], AblationMode.RGB_EDGE: [3, 1]}[mode]
    bounds = np.cumsum([0] + sizes)
    return [x[bounds[i]:bounds[i + 1]] for i in range(len(sizes))]


# --------------------------------------------------------------------------
# network


@dataclass(frozen=True)
class FusionConfig:
    mode: AblationMode = AblationMode.FULL
    base_channels: int = 16
    stages: int = 4
    blocks_per_stage: int = 2
    joint: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", AblationMode(self.mode))
        if self.stages < 1 or self.blocks_per_stage < 1 or self.base_channels < 1:
            raise ValueError("stages, blocks_per_stage and base_channels must be >= 1")

    @property
    def in_channels(self) -> int:
        return self.mode.channels


class ConvBN(Module):
    def __init__(self, rng, c_in, c_out, k, stride=1):
        self.conv = Conv(rng, c_in, c_out, k, stride, k // 2, spatial=2)
        self.bn = BatchNorm(c_out)

    def __call__(self, x):
        return self.bn(self.conv(x))


class ResBlock(Module):
    def __init__(self, rng, c_in, c_out, stride=1):
        self.c1 = ConvBN(rng, c_in, c_out, 3, stride)
        self.c2 = ConvBN(rng, c_out, c_out, 3, 1)
        self.short = ConvBN(rng, c_in, c_out, 1, stride) if (stride != 1 or c_in != c_out) else None

    def __call__(self, x):
        y = self.c2(ad.relu(self.c1(x)))
        s = self.short(x) if self.short is not None else x
        return ad.relu(ad.add(y, s))


class DecoderBlock(Module):
    def __init__(self, rng, c_in, c_out):
        self.up = ConvTranspose(rng, c_in, c_out, 4, 2, 1, spatial=2)
        self.c1 = ConvBN(rng, 2 * c_out, c_out, 3)
        self.c2 = ConvBN(rng, c_out, c_out, 3)

    def __call__(self, x, skip):
        x = ad.concat([self.up(x), skip], axis=1)
        return ad.relu(self.c2(ad.relu(self.c1(x))))


class FusionNet(Module):
    def __init__(self, cfg: FusionConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.Generator(np.random.Philox(seed))
        chans = [cfg.base_channels * 2 ** i for i in range(cfg.stages + 1)]
        self.stem = ConvBN(rng, cfg.in_channels, chans[0], 3)
        self.stages = []
        for i in range(cfg.stages):
            blocks = [ResBlock(rng, chans[i], chans[i + 1], stride=2)]
            blocks += [ResBlock(rng, chans[i + 1], chans[i + 1]) for _ in range(cfg.blocks_per_stage - 1)]
            self.stages.append(_Stage(blocks))
        self.dec = [DecoderBlock(rng, chans[i + 1], chans[i]) for i in reversed(range(cfg.stages))]
        self.head = Conv(rng, chans[0], 1, 1, 1, 0, spatial=2)
        self.assign_names()

    def check_input(self, x: ad.Tensor):
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected (N, {self.cfg.in_channels}, H, W) input, got {x.shape}")
        step = 2 ** self.cfg.stages
        if x.shape[2] % step or x.shape[3] % step:
            raise ValueError(f"spatial extents {x.shape[2:]} not divisible by 2^stages = {step}")

    def logits(self, x: ad.Tensor) -> ad.Tensor:
        self.check_input(x)
        x = ad.relu(self.stem(x))
        skips = [x]
        for stage in self.stages:
            x = stage(x)
            skips.append(x)
        skips.pop()
        for dec, skip in zip(self.dec, reversed(skips)):
            x = dec(x, skip)
        return self.head(x)

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return ad.sigmoid(self.logits(x))


class _Stage(Module):
    def __init__(self, blocks):
        self.blocks = blocks

    def __call__(self, x):
        for b in self.blocks:
            x = b(x)
        return x


def build(cfg: FusionConfig, seed: int = 0) -> FusionNet:
    return FusionNet(cfg, seed)


def forward(net: FusionNet, x: ad.Tensor) -> list[DepthMap]:
    """Normalized depth in (0, 1) per sample; multiply by depth_norm for meters."""
    y = net(x).data
    return [DepthMap(y[i, 0]) for i in range(y.shape[0])]


def loss(net: FusionNet, x: ad.Tensor, gts: list[DepthMap], depth_norm: float = 10.0) -> ad.Tensor:
    t = np.stack([np.where(d.mask, d.data / depth_norm, 0.0) for d in gts])[:, None]
    m = np.stack([d.mask for d in gts])[:, None]
    if not m.any():
        raise ValueError("ground truth has no valid pixels")
    return ad.mse(net(x), t, m)


# --------------------------------------------------------------------------
# stand-ins for the pretrained auxiliary networks


def pseudo_segmentation(img: ImageRGB, k: int = 8, seed: int = 0) -> ImageRGB:
    """k-means color quantization (20 Lloyd iterations) colored by centroid."""
    if k < 2:
        raise ValueError("k must be >= 2")
    pix = img.data.reshape(-1, 3)
    distinct = np.unique(pix, axis=0)
    if k > len(distinct):
        raise ValueError(f"k={k} exceeds the {len(distinct)} distinct colors in the image")
    km = KMeans(n_clusters=k, n_init=1, max_iter=20, tol=0.0, random_state=seed, algorithm="lloyd")
    labels = km.fit_predict(pix)
    centers = np.clip(km.cluster_centers_, 0.0, 1.0)
    return ImageRGB(centers[labels].reshape(img.data.shape))


def edge_map(img: ImageGray) -> ImageGray:
    """Sobel magnitude scaled by its maximum (all zeros for a flat image)."""
    mag = sobel_magnitude(img)
    top = mag.max()
    return ImageGray(mag / top if top > 0 else np.zeros_like(mag))
