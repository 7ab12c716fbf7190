"""Samples, the synthetic scene generator and the on-disk dataset layout.

A dataset directory holds, per stem::

    <stem>.ppm          color image (required)
    <stem>.depth.pgm    16-bit depth (required), scale in <stem>.depth.txt
    <stem>.seg.ppm      segmentation colors (optional)
    <stem>.edge.pgm     edge map (optional)

Stems are returned in lexicographic order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..imageio import (
    GRAY_WEIGHTS,
    DepthMap,
    ImageGray,
    ImageRGB,
    load_depth,
    load_gray,
    load_image,
    save_depth,
    save_image,
)
from . import rng as rngmod

OBJECT_DEPTH = (1.0, 5.5)
BACKGROUND_DEPTH = (6.0, 9.5)

# segmentation colors, exact in 8 bits so they survive a PPM round trip
PALETTE = np.array([
    [128, 128, 128], [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200],
    [245, 130, 48], [145, 30, 180], [70, 240, 240], [240, 50, 230], [210, 245, 60],
    [0, 128, 128], [170, 110, 40],
]) / 255.0


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Sample:
    rgb: ImageRGB
    depth: DepthMap | None  # absent only for inference inputs
    seg: ImageRGB | None = None
    edge: ImageGray | None = None
    id: str = ""

    def __post_init__(self):
        shape = self.rgb.data.shape[:2]
        for name in ("depth", "seg", "edge"):
            m = getattr(self, name)
            if m is not None and m.data.shape[:2] != shape:
                raise DatasetError(f"{self.id or 'sample'}: {name} is {m.data.shape[1]}x{m.data.shape[0]}, "
                                   f"rgb is {shape[1]}x{shape[0]}")


# --------------------------------------------------------------------------
# synthetic scenes


def _object_depths(rng, n, gap):
    lo, hi = OBJECT_DEPTH
    slack = (hi - lo) - (n - 1) * gap
    if slack < 0:
        raise ValueError(f"{n} objects with gap {gap} m do not fit in {lo}-{hi} m")
    u = np.sort(rng.uniform(0.0, slack, size=n))
    d = lo + u + gap * np.arange(n)
    return rng.permutation(d)


def _background(rng, width, height):
    lo, hi = BACKGROUND_DEPTH
    near = lo + rng.uniform(0.0, 1.0)
    span = rng.uniform(1.0, hi - near)
    theta = rng.uniform(0.0, 2 * np.pi)
    y, x = np.mgrid[0:height, 0:width]
    proj = np.cos(theta) * x / max(width - 1, 1) + np.sin(theta) * y / max(height - 1, 1)
    proj = (proj - proj.min()) / (proj.max() - proj.min())
    return near + span * proj


def silhouettes(labels: np.ndarray) -> np.ndarray:
    """Pixels with a 4-neighbor of a different label."""
    e = np.zeros(labels.shape, dtype=bool)
    dx = labels[:, 1:] != labels[:, :-1]
    dy = labels[1:, :] != labels[:-1, :]
    e[:, 1:] |= dx
    e[:, :-1] |= dx
    e[1:, :] |= dy
    e[:-1, :] |= dy
    return e


SURFACE_LUMA = 0.8


def _surface_colors(rng, n: int) -> np.ndarray:
    """Random hues that all share the luma SURFACE_LUMA, so brightness depends on depth alone."""
    c = rng.uniform(0.3, 1.0, size=(n, 3))
    luma = c @ GRAY_WEIGHTS
    chroma = c - luma[:, None]
    # largest chroma scale (<= 1) that keeps every channel inside [0, 1]
    room = np.where(chroma > 0, (1.0 - SURFACE_LUMA) / np.where(chroma > 0, chroma, 1.0),
                    np.where(chroma < 0, SURFACE_LUMA / np.where(chroma < 0, -chroma, 1.0), np.inf))
    s = np.minimum(1.0, room.min(axis=1))
    return SURFACE_LUMA + s[:, None] * chroma


def shade(depth: np.ndarray) -> np.ndarray:
    """Brightness falloff with distance: 1 at the nearest plane, ~0.4 at the farthest."""
    return 1.0 - 0.07 * (depth - OBJECT_DEPTH[0])


def synth_scene(seed: int, width: int = 64, height: int = 64, n_objects: int = 3,
                min_gap: float = 0.5, sample_id: str = "") -> Sample:
    """Rectangles and ellipses at distinct depths in front of a slanted plane.

    Surfaces differ in hue but not in luma, so image brightness is a monocular depth cue.
    """
    if width < 16 or height < 16:
        raise ValueError("synthetic scenes need at least 16x16 pixels")
    if n_objects < 1 or n_objects >= len(PALETTE):
        raise ValueError(f"n_objects must lie in 1..{len(PALETTE) - 1}")
    rng = rngmod.stream(seed, "synth_scene")
    depth = _background(rng, width, height)
    labels = np.zeros((height, width), dtype=np.int64)
    y, x = np.mgrid[0:height, 0:width]
    obj_d = _object_depths(rng, n_objects, min_gap)
    colors = _surface_colors(rng, n_objects + 1)
    shapes = []
    for i in range(n_objects):
        w = rng.integers(width // 6, width // 2 + 1)
        h = rng.integers(height // 6, height // 2 + 1)
        x0 = rng.integers(0, width - w + 1)
        y0 = rng.integers(0, height - h + 1)
        kind = "ellipse" if rng.random() < 0.5 else "rect"
        shapes.append((obj_d[i], i + 1, kind, x0, y0, w, h))
    # paint far to near so nearer objects occlude
    for d, label, kind, x0, y0, w, h in sorted(shapes, key=lambda s: -s[0]):
        if kind == "rect":
            inside = (x >= x0) & (x < x0 + w) & (y >= y0) & (y < y0 + h)
        else:
            cx, cy = x0 + (w - 1) / 2, y0 + (h - 1) / 2
            inside = ((x - cx) / (w / 2)) ** 2 + ((y - cy) / (h / 2)) ** 2 <= 1.0
        depth = np.where(inside, d, depth)
        labels = np.where(inside, label, labels)
    rgb = colors[labels] * shade(depth)[:, :, None]
    rgb = np.clip(rgb + rng.normal(0.0, 0.01, size=rgb.shape), 0.0, 1.0)
    return Sample(
        rgb=ImageRGB(rgb),
        depth=DepthMap(depth),
        seg=ImageRGB(PALETTE[labels]),
        edge=ImageGray(silhouettes(labels).astype(np.float64)),
        id=sample_id,
    )


def synth_dataset(seed: int, count: int, width: int = 64, height: int = 64, n_objects: int = 3,
                  min_gap: float = 0.5, prefix: str = "scene") -> list[Sample]:
    return [
        synth_scene(rngmod.derive_seed(seed, prefix, i), width, height, n_objects, min_gap,
                    sample_id=f"{prefix}_{i:04d}")
        for i in range(count)
    ]


# --------------------------------------------------------------------------
# directory layout

_ROLES = (".depth.pgm", ".depth.txt", ".seg.ppm", ".edge.pgm", ".ppm")


def _role(name: str):
    for suffix in _ROLES:
        if name.endswith(suffix) and len(name) > len(suffix):
            return name[: -len(suffix)], suffix
    return None, None


def write_dataset(samples: list[Sample], directory, depth_scale: float = 1e-3) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for s in samples:
        if not s.id:
            raise DatasetError("samples need an id to be written")
        save_image(s.rgb, d / f"{s.id}.ppm")
        save_depth(s.depth, d / f"{s.id}.depth.pgm", depth_scale)
        if s.seg is not None:
            save_image(s.seg, d / f"{s.id}.seg.ppm")
        if s.edge is not None:
            save_image(s.edge, d / f"{s.id}.edge.pgm")


def load_dataset(directory) -> list[Sample]:
    d = Path(directory)
    if not d.is_dir():
        raise DatasetError(f"{d}: not a directory")
    stems: dict[str, set[str]] = {}
    for f in sorted(d.iterdir()):
        if not f.is_file() or f.suffix not in (".ppm", ".pgm", ".txt"):
            continue
        stem, role = _role(f.name)
        if stem is None:
            raise DatasetError(f"{f.name}: file does not follow the <stem>.<role> layout")
        stems.setdefault(stem, set()).add(role)
    out = []
    for stem in sorted(stems):
        roles = stems[stem]
        for need in (".ppm", ".depth.pgm"):
            if need not in roles:
                raise DatasetError(f"{stem}: orphaned files {sorted(stem + r for r in roles)}; "
                                   f"missing {stem}{need}")
        try:
            rgb = load_image(d / f"{stem}.ppm")
            depth = load_depth(d / f"{stem}.depth.pgm")
            seg = load_image(d / f"{stem}.seg.ppm") if ".seg.ppm" in roles else None
            edge = load_gray(d / f"{stem}.edge.pgm") if ".edge.pgm" in roles else None
        except ValueError as e:
            raise DatasetError(f"{stem}: {e}") from e
        out.append(Sample(rgb, depth, seg, edge, id=stem))
    return out
