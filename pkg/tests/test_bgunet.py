import numpy as np
import pytest

from bgdepth import autodiff as ad
from bgdepth import bgunet
from bgdepth.grid import GridParams
from bgdepth.imageio import DepthMap, ImageGray, ImageRGB


def _expected_params(cin, base, depth, out):
    conv5 = lambda a, b: a * b * 125 + b  # noqa: E731
    block = lambda a, b: conv5(a, b) + 2 * b + conv5(b, b) + 2 * b  # noqa: E731
    chans = [base * 2**i for i in range(depth + 1)]
    total, c = 0, cin
    for ch in chans[:-1]:
        total += block(c, ch)
        c = ch
    total += block(c, chans[-1])
    for i in reversed(range(depth)):
        total += chans[i + 1] * chans[i] * 64 + chans[i]  # 4x4x4 transposed conv
        total += block(2 * chans[i], chans[i])
    return total + chans[0] * out + out


@pytest.mark.parametrize("cin,base,depth", [(3, 8, 2), (1, 4, 1), (3, 2, 3)])
def test_parameter_count(cin, base, depth):
    m = bgunet.build(bgunet.BGUNetConfig(in_channels=cin, base_channels=base, depth=depth))
    assert m.num_parameters() == _expected_params(cin, base, depth, cin)


def test_desk_scale_count():
    assert bgunet.build(bgunet.BGUNetConfig()).num_parameters() == 412491


def test_names_are_unique_and_dotted():
    m = bgunet.build(bgunet.BGUNetConfig(depth=2))
    names = [n for n, _ in m.named_parameters()]
    assert len(names) == len(set(names))
    assert "enc0.sub1.conv.weight" in names and "dec1.up.weight" in names and "head.bias" in names
    assert all(p.name == n for n, p in m.named_parameters())


def test_output_shape_and_range(rng):
    cfg = bgunet.BGUNetConfig(in_channels=3, base_channels=2, depth=2)
    y = bgunet.build(cfg)(ad.Tensor(rng.random((2, 3, 8, 8, 16))))
    assert y.shape == (2, 3, 8, 8, 16)
    assert np.all((y.data > 0) & (y.data < 1))


def test_dims_must_divide():
    cfg = bgunet.BGUNetConfig(base_channels=2, depth=2)
    with pytest.raises(ValueError):
        bgunet.build(cfg, dims=(6, 8, 16))
    with pytest.raises(ValueError):
        bgunet.build(cfg)(ad.Tensor(np.zeros((1, 3, 6, 8, 16))))


def test_config_validation():
    with pytest.raises(ValueError):
        bgunet.BGUNetConfig(in_channels=2)
    with pytest.raises(ValueError):
        bgunet.BGUNetConfig(loss_space="pixels")


def test_same_seed_same_weights():
    a = bgunet.build(bgunet.BGUNetConfig(base_channels=2, depth=1), seed=5)
    b = bgunet.build(bgunet.BGUNetConfig(base_channels=2, depth=1), seed=5)
    for (_, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        np.testing.assert_array_equal(p.data, q.data)


def test_occupancy_channels_double_the_input():
    cfg = bgunet.BGUNetConfig(in_channels=1, base_channels=2, depth=1, include_occupancy=True,
                              grid_params=GridParams(2, 8))
    x = bgunet.input_tensor([ImageGray(np.random.default_rng(0).random((16, 16)))], cfg)
    assert x.shape == (1, 2, 8, 8, 8)
    assert set(np.unique(x.data[0, 1])) <= {0.0, 1.0}


def test_tensor_slice_path_matches_numpy_path(rng):
    cfg = bgunet.BGUNetConfig(in_channels=3, base_channels=2, depth=1, grid_params=GridParams(2, 8))
    m = bgunet.build(cfg)
    images = [ImageRGB(rng.random((16, 16, 3))) for _ in range(2)]
    x = bgunet.input_tensor(images, cfg)
    out = m(x)
    geo = bgunet.geometry_tensor(out, images, cfg).data
    for i, img in enumerate(images):
        grids = [bgunet.DenseGrid.full(out.data[i, c]) for c in range(3)]
        ref = bgunet.geometry_map(grids, img, cfg.grid_params).data
        np.testing.assert_allclose(geo[i, 0], ref, atol=1e-12)


def test_forward_returns_one_grid_per_channel(rng):
    cfg = bgunet.BGUNetConfig(in_channels=3, base_channels=2, depth=1, grid_params=GridParams(2, 8))
    m = bgunet.build(cfg).eval()
    grids = bgunet.image_grids(ImageRGB(rng.random((16, 16, 3))), cfg)
    out = bgunet.forward(m, grids)
    assert len(out) == 3 and out[0].dims == (8, 8, 8)


def test_loss_is_masked_mse_of_geometry_map(rng):
    cfg = bgunet.BGUNetConfig(in_channels=1, base_channels=2, depth=1, grid_params=GridParams(2, 8))
    m = bgunet.build(cfg)
    images = [ImageGray(rng.random((16, 16)))]
    d = rng.uniform(1, 9, (16, 16))
    d[:3] = 0.0
    gt = DepthMap(d)
    x = bgunet.input_tensor(images, cfg)
    got = bgunet.loss(m, x, images, [gt]).item()
    geo = bgunet.geometry_tensor(m(x), images, cfg).data[0, 0]
    ref = np.mean((geo[gt.mask] - d[gt.mask] / 10.0) ** 2)
    assert got == pytest.approx(ref, rel=1e-12)


def test_grid_space_loss_runs_and_differs(rng):
    base = dict(in_channels=1, base_channels=2, depth=1, grid_params=GridParams(2, 8))
    images = [ImageGray(rng.random((16, 16)))]
    gts = [DepthMap(rng.uniform(1, 9, (16, 16)))]
    m = bgunet.build(bgunet.BGUNetConfig(**base))
    g = bgunet.build(bgunet.BGUNetConfig(loss_space="grid", **base))
    x = bgunet.input_tensor(images, m.cfg)
    a, b = bgunet.loss(m, x, images, gts).item(), bgunet.loss(g, x, images, gts).item()
    assert np.isfinite(b) and a != b


def test_empty_ground_truth_is_an_error(rng):
    cfg = bgunet.BGUNetConfig(in_channels=1, base_channels=2, depth=1, grid_params=GridParams(2, 8))
    m = bgunet.build(cfg)
    images = [ImageGray(rng.random((16, 16)))]
    with pytest.raises(ValueError):
        bgunet.loss(m, bgunet.input_tensor(images, cfg), images, [DepthMap(np.zeros((16, 16)))])
