"""Depth evaluation: RMSE, mean log10 error, mSSIM and DERM.

All depth metrics use only pixels valid in both maps.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imageio import DepthMap, ImageGray

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DERM_THRESHOLD = 0.5

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    log10_err: float
    mssim: float
    derm: float
    n_valid: int

    HEADER = ("RMSE↓", "log10↓", "mSSIM↑", "DERM↑", "n_valid")

    def to_tsv(self, label: str | None = None) -> str:
        vals = [f"{self.rmse:.6f}", f"{self.log10_err:.6f}", f"{self.mssim:.6f}",
                f"{self.derm:.6f}", str(self.n_valid)]
        return "\t".join(([label] if label is not None else []) + vals)

    def to_keyvalue(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def tsv_header(cls, label: str | None = "id") -> str:
        return "\t".join(([label] if label is not None else []) + list(cls.HEADER))

    @classmethod
    def mean(cls, reports: list["MetricReport"]) -> "MetricReport":
        if not reports:
            raise ValueError("no reports to average")
        return cls(
            rmse=float(np.mean([r.rmse for r in reports])),
            log10_err=float(np.mean([r.log10_err for r in reports])),
            mssim=float(np.mean([r.mssim for r in reports])),
            derm=float(np.mean([r.derm for r in reports])),
            n_valid=int(np.sum([r.n_valid for r in reports])),
        )


def _joint(gt: DepthMap, pred: DepthMap) -> np.ndarray:
    if gt.data.shape != pred.data.shape:
        raise ValueError(f"dimension mismatch: {gt.data.shape} vs {pred.data.shape}")
    m = gt.mask & pred.mask
    if not m.any():
        raise ValueError("no jointly valid pixels")
    return m


def rmse(gt: DepthMap, pred: DepthMap) -> float:
    m = _joint(gt, pred)
    d = gt.data[m] - pred.data[m]
    return float(np.sqrt(np.mean(d * d)))


def log10_error(gt: DepthMap, pred: DepthMap) -> float:
    if gt.data.shape != pred.data.shape:
        raise ValueError(f"dimension mismatch: {gt.data.shape} vs {pred.data.shape}")
    m = gt.mask & pred.mask
    # DepthMap already forbids nonpositive valid depths; raw arrays may still sneak in
    if np.any(gt.data[m] <= 0) or np.any(pred.data[m] <= 0):
        raise ValueError("log10 error needs strictly positive depths")
    if not m.any():
        raise ValueError("no jointly valid pixels")
    return float(np.mean(np.abs(np.log10(gt.data[m]) - np.log10(pred.data[m]))))


def gaussian_1d(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    g = gaussian_1d(size, sigma)
    return np.outer(g, g)


def _filter_valid(a: np.ndarray, g1: np.ndarray) -> np.ndarray:
    a = sliding_window_view(a, g1.size, axis=0) @ g1
    return sliding_window_view(a, g1.size, axis=1) @ g1


def ssim_map(x: np.ndarray, y: np.ndarray, L: float = 1.0) -> np.ndarray:
    """Local SSIM at every window position fully inside the image."""
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g1 = gaussian_1d()
    c1 = (SSIM_K1 * L) ** 2
    c2 = (SSIM_K2 * L) ** 2
    mx, my = _filter_valid(x, g1), _filter_valid(y, g1)
    sxx = _filter_valid(x * x, g1) - mx * mx
    syy = _filter_valid(y * y, g1) - my * my
    sxy = _filter_valid(x * y, g1) - mx * my
    return ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))


def mssim(gt_vis: ImageGray, pred_vis: ImageGray) -> float:
    return float(ssim_map(gt_vis.data, pred_vis.data).mean())


def visualize(depth: DepthMap) -> ImageGray:
    """Min-max normalized gray visualization; invalid pixels render as 0."""
    m = depth.mask
    out = np.zeros(depth.data.shape)
    if m.any():
        lo, hi = depth.data[m].min(), depth.data[m].max()
        if hi > lo:
            out[m] = (depth.data[m] - lo) / (hi - lo)
    return ImageGray(out)


def _sobel(a: np.ndarray):
    # difference first, then smooth: flat regions give exact zeros
    p = np.pad(a, 1, mode="edge")
    dx = p[:, 2:] - p[:, :-2]
    dy = p[2:, :] - p[:-2, :]
    gx = dx[:-2] + 2.0 * dx[1:-1] + dx[2:]
    gy = dy[:, :-2] + 2.0 * dy[:, 1:-1] + dy[:, 2:]
    return gx, gy


def sobel_magnitude(img: ImageGray | np.ndarray) -> np.ndarray:
    a = img.data if isinstance(img, ImageGray) else np.asarray(img, dtype=np.float64)
    if a.ndim != 2 or min(a.shape) < 3:
        raise ValueError(f"Sobel needs a 2D image of at least 3x3, got {a.shape}")
    gx, gy = _sobel(a)
    return np.sqrt(gx * gx + gy * gy)


def _minmax(a: np.ndarray) -> np.ndarray:
    lo, hi = a.min(), a.max()
    if hi <= lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def edge_mask(depth: DepthMap, threshold: float = DERM_THRESHOLD) -> np.ndarray:
    vis = visualize(depth).data
    return _minmax(sobel_magnitude(vis)) > threshold


def f1_score(truth: np.ndarray, pred: np.ndarray) -> float:
    """F1 with ``truth`` as positives; 1 when both are empty, 0 when one is."""
    nt, np_ = int(truth.sum()), int(pred.sum())
    if nt == 0 and np_ == 0:
        return 1.0
    if nt == 0 or np_ == 0:
        return 0.0
    tp = int((truth & pred).sum())
    if tp == 0:
        return 0.0
    precision = tp / np_
    recall = tp / nt
    return 2 * precision * recall / (precision + recall)


def derm(gt: DepthMap, pred: DepthMap, threshold: float = DERM_THRESHOLD) -> float:
    if gt.data.shape != pred.data.shape:
        raise ValueError(f"dimension mismatch: {gt.data.shape} vs {pred.data.shape}")
    return f1_score(edge_mask(gt, threshold), edge_mask(pred, threshold))


def evaluate_pair(gt: DepthMap, pred: DepthMap) -> MetricReport:
    m = _joint(gt, pred)
    return MetricReport(
        rmse=rmse(gt, pred),
        log10_err=log10_error(gt, pred),
        mssim=mssim(visualize(gt), visualize(pred)),
        derm=derm(gt, pred),
        n_valid=int(m.sum()),
    )
