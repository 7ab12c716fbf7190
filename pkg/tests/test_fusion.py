import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bgdepth import autodiff as ad
from bgdepth import fusion
from bgdepth.fusion import AblationMode, FusionInput
from bgdepth.imageio import ImageGray, ImageRGB


def _inputs(rng, h=8, w=8):
    return FusionInput(ImageGray(rng.random((h, w))), ImageRGB(rng.random((h, w, 3))),
                       ImageGray(rng.random((h, w))), ImageRGB(rng.random((h, w, 3))))


def test_full_mode_at_capture_resolution(rng):
    x = fusion.assemble(_inputs(rng, 480, 640), AblationMode.FULL)
    assert x.shape == (1, 5, 480, 640)


@pytest.mark.parametrize("mode,channels", [(AblationMode.FULL, 5), (AblationMode.RGB_SEG_EDGE, 5),
                                           (AblationMode.RGB_SEG, 6), (AblationMode.RGB_EDGE, 4)])
def test_channel_counts(rng, mode, channels):
    assert fusion.assemble(_inputs(rng), mode).shape == (1, channels, 8, 8)
    assert mode.channels == channels


def test_channel_order(rng):
    inp = _inputs(rng)
    x = fusion.assemble(inp, AblationMode.FULL).data[0]
    np.testing.assert_array_equal(x[0], inp.geometry.data)
    np.testing.assert_array_equal(x[1:4], inp.segmentation.data.transpose(2, 0, 1))
    np.testing.assert_array_equal(x[4], inp.edge.data)
    swapped = FusionInput(inp.edge, inp.segmentation, inp.geometry)
    assert not np.array_equal(fusion.assemble(swapped, AblationMode.FULL).data, x[None])
    rgb = fusion.assemble(inp, AblationMode.RGB_EDGE).data[0]
    np.testing.assert_array_equal(rgb[:3], inp.rgb.data.transpose(2, 0, 1))


@given(st.sampled_from(list(AblationMode)), st.integers(0, 2**31))
def test_assemble_split_round_trip(mode, seed):
    r = np.random.default_rng(seed)
    inp = _inputs(r, 4, 6)
    groups = fusion.split_channels(fusion.assemble_array(inp, mode), mode)
    if mode is AblationMode.FULL:
        np.testing.assert_array_equal(groups[0][0], inp.geometry.data)
    elif mode is AblationMode.RGB_SEG_EDGE:
        np.testing.assert_allclose(groups[0][0], inp.rgb.data @ [0.299, 0.587, 0.114], atol=1e-15)
    else:
        np.testing.assert_array_equal(groups[0].transpose(1, 2, 0), inp.rgb.data)
    if mode in (AblationMode.FULL, AblationMode.RGB_SEG_EDGE, AblationMode.RGB_SEG):
        np.testing.assert_array_equal(groups[1].transpose(1, 2, 0), inp.segmentation.data)
    if mode in (AblationMode.FULL, AblationMode.RGB_SEG_EDGE, AblationMode.RGB_EDGE):
        np.testing.assert_array_equal(groups[-1][0], inp.edge.data)


def test_assemble_errors(rng):
    inp = _inputs(rng)
    bad = FusionInput(inp.geometry, ImageRGB(rng.random((4, 8, 3))), inp.edge)
    with pytest.raises(ValueError):
        fusion.assemble(bad, AblationMode.FULL)
    with pytest.raises(ValueError):
        fusion.assemble(FusionInput(None, inp.segmentation, inp.edge), AblationMode.FULL)
    with pytest.raises(ValueError):
        fusion.assemble(FusionInput(inp.geometry, inp.segmentation, inp.edge), AblationMode.RGB_SEG)


def test_forward_shape_range_and_determinism(rng):
    cfg = fusion.FusionConfig(base_channels=2, stages=2, blocks_per_stage=1)
    net = fusion.build(cfg, seed=1).eval()
    x = ad.Tensor(rng.random((2, 5, 16, 8)))
    out = fusion.forward(net, x)
    assert len(out) == 2 and out[0].data.shape == (16, 8)
    assert all(np.all((d.data > 0) & (d.data < 1)) for d in out)
    again = fusion.forward(fusion.build(cfg, seed=1).eval(), x)
    np.testing.assert_array_equal(out[0].data, again[0].data)


def test_zero_head_gives_one_half(rng):
    net = fusion.build(fusion.FusionConfig(base_channels=2, stages=1, blocks_per_stage=1))
    net.head.weight.data[...] = 0.0
    net.head.bias.data[...] = 0.0
    y = net(ad.Tensor(rng.random((1, 5, 8, 8))))
    np.testing.assert_array_equal(y.data, 0.5)


def test_shape_violation(rng):
    net = fusion.build(fusion.FusionConfig(base_channels=2, stages=2, blocks_per_stage=1))
    with pytest.raises(ValueError):
        net(ad.Tensor(rng.random((1, 5, 6, 8))))
    with pytest.raises(ValueError):
        net(ad.Tensor(rng.random((1, 4, 8, 8))))


def test_pseudo_segmentation_two_colors():
    img = np.zeros((6, 6, 3))
    img[:, 3:] = [0.9, 0.2, 0.1]
    seg = fusion.pseudo_segmentation(ImageRGB(img), k=2)
    np.testing.assert_allclose(seg.data, img, atol=1e-12)


def test_pseudo_segmentation_properties(rng):
    img = ImageRGB(rng.random((10, 10, 3)))
    a = fusion.pseudo_segmentation(img, k=4, seed=3)
    b = fusion.pseudo_segmentation(img, k=4, seed=3)
    np.testing.assert_array_equal(a.data, b.data)
    assert len(np.unique(a.data.reshape(-1, 3), axis=0)) <= 4
    with pytest.raises(ValueError):
        fusion.pseudo_segmentation(ImageRGB(np.zeros((3, 3, 3))), k=2)
    with pytest.raises(ValueError):
        fusion.pseudo_segmentation(img, k=1)


def test_edge_map_constant_and_step():
    assert not fusion.edge_map(ImageGray(np.full((5, 5), 0.4))).data.any()
    img = np.zeros((5, 6))
    img[:, 3:] = 1.0
    e = fusion.edge_map(ImageGray(img)).data
    # the hand-applied stencil gives |Gx| = 4 on columns 2 and 3, 0 elsewhere
    np.testing.assert_array_equal(e[:, 2], 1.0)
    np.testing.assert_array_equal(e[:, 3], 1.0)
    assert e[:, [0, 1, 4, 5]].max() == 0.0
    assert e.min() >= 0 and e.max() <= 1
