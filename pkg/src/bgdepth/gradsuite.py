"""Finite-difference suite over every differentiable op and both networks.

Each case builds small float64 inputs from a fixed seed, reduces the op's
output to a scalar with a random projection, and compares tape gradients with
central differences.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from . import bgunet, fusion
from .grid import GridParams
from .imageio import DepthMap, ImageGray

TOLERANCE = 1e-5
EPS = 1e-5


def _project(rng, shape):
    """Random linear functional: turns any output into a scalar loss."""
    w = rng.standard_normal(shape)
    return lambda y: ad.sum(ad.mul(y, w))


def _away_from_zero(rng, shape, margin=0.05):
    # keeps relu/maxpool inputs clear of kinks and ties at the FD step size
    x = rng.uniform(margin, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return x


def _params(module) -> list[ad.Param]:
    return module.parameters()


def _case_conv(rng, spatial, stride, method):
    shape = (2, 2) + (6,) * spatial
    x = ad.Tensor(rng.standard_normal(shape), requires_grad=True)
    w = ad.Tensor(rng.standard_normal((3, 2) + (3,) * spatial) * 0.5, requires_grad=True)
    b = ad.Tensor(rng.standard_normal(3), requires_grad=True)
    fn = ad.conv3d if spatial == 3 else ad.conv2d
    out_shape = fn(x, w, b, stride, 1, method).shape
    proj = _project(rng, out_shape)
    return lambda x, w, b: proj(fn(x, w, b, stride, 1, method)), [x, w, b]


def _case_conv_t(rng, spatial):
    shape = (2, 3) + (3,) * spatial
    x = ad.Tensor(rng.standard_normal(shape), requires_grad=True)
    w = ad.Tensor(rng.standard_normal((3, 2) + (4,) * spatial) * 0.5, requires_grad=True)
    b = ad.Tensor(rng.standard_normal(2), requires_grad=True)
    fn = ad.conv_transpose3d if spatial == 3 else ad.conv_transpose2d
    proj = _project(rng, fn(x, w, b).shape)
    return lambda x, w, b: proj(fn(x, w, b)), [x, w, b]


def _case_pool(rng, spatial):
    shape = (2, 2) + (4,) * spatial
    # distinct values spaced well beyond eps, so the argmax cannot flip
    vals = rng.permutation(int(np.prod(shape))).reshape(shape) * 0.01
    x = ad.Tensor(vals, requires_grad=True)
    fn = ad.maxpool3d if spatial == 3 else ad.maxpool2d
    proj = _project(rng, fn(x).shape)
    return lambda x: proj(fn(x)), [x]


def _case_bn(rng, spatial, training):
    shape = (3, 2) + (3,) * spatial
    x = ad.Tensor(rng.standard_normal(shape), requires_grad=True)
    g = ad.Tensor(rng.uniform(0.5, 1.5, 2), requires_grad=True)
    b = ad.Tensor(rng.standard_normal(2), requires_grad=True)
    rm = rng.standard_normal(2) * 0.1
    rv = rng.uniform(0.5, 1.5, 2)
    proj = _project(rng, shape)

    def f(x, g, b):
        # fresh copies: running-stat updates must not leak between FD evaluations
        return proj(ad.batch_norm(x, g, b, rm.copy(), rv.copy(), training))

    return f, [x, g, b]


def _case_unary(rng, fn):
    x = ad.Tensor(_away_from_zero(rng, (3, 4, 5)), requires_grad=True)
    proj = _project(rng, x.shape)
    return lambda x: proj(fn(x)), [x]


def _case_concat(rng):
    a = ad.Tensor(rng.standard_normal((2, 2, 3, 3)), requires_grad=True)
    b = ad.Tensor(rng.standard_normal((2, 3, 3, 3)), requires_grad=True)
    proj = _project(rng, (2, 5, 3, 3))
    return lambda a, b: proj(ad.concat([a, b], axis=1)), [a, b]


def _case_mse(rng):
    p = ad.Tensor(rng.standard_normal((2, 1, 4, 4)), requires_grad=True)
    t = rng.standard_normal((2, 1, 4, 4))
    m = rng.random((2, 1, 4, 4)) < 0.7
    return lambda p: ad.mse(p, t, m), [p]


def _case_gather(rng):
    x = ad.Tensor(rng.standard_normal((1, 1, 3, 3, 3)), requires_grad=True)
    idx = rng.integers(0, 27, size=(8, 10))
    w = rng.random((8, 10))
    proj = _project(rng, (1, 1, 2, 5))
    return lambda x: proj(ad.gather_weighted(x, idx, w, (1, 1, 2, 5))), [x]


def _case_bg_chain(rng):
    """Image -> lift -> grid network -> slice -> masked MSE on an 8x8x8 grid."""
    cfg = bgunet.BGUNetConfig(in_channels=1, base_channels=2, depth=1, grid_params=GridParams(2, 8))
    model = bgunet.build(cfg, seed=int(rng.integers(1 << 31)))
    images = [ImageGray(rng.random((16, 16))) for _ in range(2)]
    gts = [DepthMap(rng.uniform(1.0, 9.0, (16, 16))) for _ in range(2)]
    x = bgunet.input_tensor(images, cfg)
    params = _params(model)

    def f(*_):
        return bgunet.loss(model, x, images, gts)

    return f, params


def _case_fusion_chain(rng):
    cfg = fusion.FusionConfig(base_channels=2, stages=2, blocks_per_stage=1)
    net = fusion.build(cfg, seed=int(rng.integers(1 << 31)))
    x = ad.Tensor(rng.random((2, 5, 8, 8)))
    gts = [DepthMap(rng.uniform(1.0, 9.0, (8, 8))) for _ in range(2)]

    def f(*_):
        return fusion.loss(net, x, gts)

    return f, _params(net)


CASES: dict[str, Callable] = {
    "conv3d": lambda r: _case_conv(r, 3, 1, "direct"),
    "conv3d_fft": lambda r: _case_conv(r, 3, 1, "fft"),
    "conv3d_stride2": lambda r: _case_conv(r, 3, 2, "direct"),
    "conv2d": lambda r: _case_conv(r, 2, 1, "direct"),
    "conv2d_stride2": lambda r: _case_conv(r, 2, 2, "direct"),
    "conv_transpose3d": lambda r: _case_conv_t(r, 3),
    "conv_transpose2d": lambda r: _case_conv_t(r, 2),
    "maxpool3d": lambda r: _case_pool(r, 3),
    "maxpool2d": lambda r: _case_pool(r, 2),
    "batchnorm3d_train": lambda r: _case_bn(r, 3, True),
    "batchnorm3d_eval": lambda r: _case_bn(r, 3, False),
    "batchnorm2d_train": lambda r: _case_bn(r, 2, True),
    "batchnorm2d_eval": lambda r: _case_bn(r, 2, False),
    "relu": lambda r: _case_unary(r, ad.relu),
    "sigmoid": lambda r: _case_unary(r, ad.sigmoid),
    "concat": _case_concat,
    "mse": _case_mse,
    "gather_weighted": _case_gather,
    "bgunet_lift_slice_mse": _case_bg_chain,
    "fusionnet_mse": _case_fusion_chain,
}


def run(seed: int = 0, names=None) -> list[tuple[str, float]]:
    out = []
    for i, (name, make) in enumerate(CASES.items()):
        if names is not None and name not in names:
            continue
        rng = np.random.Generator(np.random.Philox(seed + 1000 * i))
        f, inputs = make(rng)
        out.append((name, ad.grad_check(f, inputs, EPS)))
    return out
