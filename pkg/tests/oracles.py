"""Slow scalar-loop reference implementations of the metrics."""

import math

import numpy as np


def rmse_loop(gt, pred):
    total, n = 0.0, 0
    for a, b in zip(gt.ravel(), pred.ravel()):
        if a > 0 and b > 0:
            total += (a - b) ** 2
            n += 1
    return math.sqrt(total / n)


def log10_loop(gt, pred):
    total, n = 0.0, 0
    for a, b in zip(gt.ravel(), pred.ravel()):
        if a > 0 and b > 0:
            total += abs(math.log10(a) - math.log10(b))
            n += 1
    return total / n


def gauss_window(size=11, sigma=1.5):
    c = (size - 1) / 2
    w = [[math.exp(-((i - c) ** 2 + (j - c) ** 2) / (2 * sigma * sigma)) for j in range(size)]
         for i in range(size)]
    s = sum(map(sum, w))
    return [[v / s for v in row] for row in w]


def ssim_windows(x, y, L=1.0, size=11):
    """Two-pass SSIM at every full window position."""
    w = gauss_window(size)
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    h, wd = x.shape
    out = np.empty((h - size + 1, wd - size + 1))
    for r in range(h - size + 1):
        for c in range(wd - size + 1):
            mx = my = 0.0
            for i in range(size):
                for j in range(size):
                    mx += w[i][j] * x[r + i, c + j]
                    my += w[i][j] * y[r + i, c + j]
            vx = vy = cxy = 0.0
            for i in range(size):
                for j in range(size):
                    dx, dy = x[r + i, c + j] - mx, y[r + i, c + j] - my
                    vx += w[i][j] * dx * dx
                    vy += w[i][j] * dy * dy
                    cxy += w[i][j] * dx * dy
            out[r, c] = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return out


def minmax_loop(a):
    lo, hi = min(a.ravel()), max(a.ravel())
    out = np.zeros(a.shape)
    if hi > lo:
        for idx in np.ndindex(a.shape):
            out[idx] = (a[idx] - lo) / (hi - lo)
    return out


def visualize_loop(d):
    valid = [v for v in d.ravel() if v > 0]
    lo, hi = min(valid), max(valid)
    out = np.zeros(d.shape)
    for idx in np.ndindex(d.shape):
        if d[idx] > 0 and hi > lo:
            out[idx] = (d[idx] - lo) / (hi - lo)
    return out


def sobel_loop(a):
    kx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    h, w = a.shape
    out = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            gx = gy = 0.0
            for i in range(3):
                for j in range(3):
                    v = a[min(max(r + i - 1, 0), h - 1), min(max(c + j - 1, 0), w - 1)]
                    gx += kx[i][j] * v
                    gy += kx[j][i] * v
            out[r, c] = math.sqrt(gx * gx + gy * gy)
    return out


def edge_set(depth, threshold=0.5):
    mag = minmax_loop(sobel_loop(visualize_loop(depth)))
    return {idx for idx in np.ndindex(depth.shape) if mag[idx] > threshold}


def f1_sets(truth, pred):
    if not truth and not pred:
        return 1.0
    if not truth or not pred:
        return 0.0
    tp = len(truth & pred)
    if tp == 0:
        return 0.0
    p, r = tp / len(pred), tp / len(truth)
    return 2 * p * r / (p + r)


def derm_loop(gt, pred, threshold=0.5):
    return f1_sets(edge_set(gt, threshold), edge_set(pred, threshold))
