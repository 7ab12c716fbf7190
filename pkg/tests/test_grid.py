import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bgdepth.grid import (
    BilateralGrid,
    DenseGrid,
    GridParams,
    bilateral_filter,
    gaussian_spread_matrix,
    grid_blur,
    lift_gray,
    lift_rgb,
    normalize,
    read_grid,
    slice,
    write_grid,
)
from bgdepth.imageio import ImageGray, ImageRGB


def _lift_loop(img, sr_s, bins):
    """Pixel-by-pixel splat with the stated rounding rule."""
    h, w = img.shape
    gw, gh = math.ceil(w / sr_s), math.ceil(h / sr_s)
    vs = np.zeros((gw, gh, bins))
    wt = np.zeros((gw, gh, bins))

    def rnd(t):
        return int(math.floor(t + 0.5))  # all coordinates are >= 0

    for y in range(h):
        for x in range(w):
            v = img[y, x]
            a = min(rnd(x / sr_s), gw - 1)
            b = min(rnd(y / sr_s), gh - 1)
            c = min(rnd(v * (bins - 1)), bins - 1)
            vs[a, b, c] += v
            wt[a, b, c] += 1
    return vs, wt


def _trilinear_loop(value, ref, sr_s):
    gw, gh, gb = value.shape
    h, w = ref.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            f = [min(x / sr_s, gw - 1), min(y / sr_s, gh - 1), min(ref[y, x] * (gb - 1), gb - 1)]
            n = [gw, gh, gb]
            acc = 0.0
            for corner in range(8):
                wgt = 1.0
                idx = []
                for ax in range(3):
                    i0 = min(int(math.floor(f[ax])), n[ax] - 1)
                    t = f[ax] - i0
                    hi = (corner >> ax) & 1
                    idx.append(min(i0 + hi, n[ax] - 1))
                    wgt *= t if hi else 1 - t
                acc += wgt * value[tuple(idx)]
            out[y, x] = acc
    return out


def test_dims_use_ceiling():
    assert GridParams(2, 16).dims(5, 4) == (3, 2, 16)
    assert GridParams(4, 8).dims(64, 48) == (16, 12, 8)


def test_params_validation():
    with pytest.raises(ValueError):
        GridParams(0, 16)
    with pytest.raises(ValueError):
        GridParams(2, 1)


@pytest.mark.parametrize("sr_s,bins", [(1, 8), (2, 16), (3, 5), (4, 32)])
def test_lift_matches_loop_oracle(rng, sr_s, bins):
    img = rng.random((9, 11))
    g = lift_gray(ImageGray(img), GridParams(sr_s, bins))
    vs, wt = _lift_loop(img, sr_s, bins)
    np.testing.assert_array_equal(g.weight, wt)
    np.testing.assert_allclose(g.value_sum, vs, rtol=0, atol=1e-12)


def test_lift_rounds_ties_away_from_zero():
    # x = 1 at sr_s = 2 sits at 0.5 -> cell 1; v = 0.25 with 3 bins sits at 0.5 -> bin 1
    img = np.full((1, 3), 0.25)
    g = lift_gray(ImageGray(img), GridParams(2, 3))
    assert g.weight[0, 0, 1] == 1 and g.weight[1, 0, 1] == 2


@given(st.integers(1, 12), st.integers(1, 12), st.sampled_from([1, 2, 4]), st.sampled_from([8, 16, 32, 64]),
       st.integers(0, 2**31))
def test_lift_conserves_mass(h, w, sr_s, bins, seed):
    img = np.random.default_rng(seed).random((h, w))
    g = lift_gray(ImageGray(img), GridParams(sr_s, bins))
    assert g.weight.sum() == h * w
    assert g.value_sum.sum() == pytest.approx(img.sum(), rel=1e-9, abs=1e-12)


def test_lift_rgb_is_per_channel(rng):
    img = rng.random((6, 5, 3))
    grids = lift_rgb(ImageRGB(img), GridParams(2, 8))
    for i, g in enumerate(grids):
        np.testing.assert_array_equal(g.value_sum, lift_gray(ImageGray(img[:, :, i]), GridParams(2, 8)).value_sum)


def test_normalize_occupancy_and_mean():
    g = BilateralGrid(np.array([[[3.0, 0.0]]]), np.array([[[2.0, 0.0]]]))
    d = normalize(g)
    assert d.value[0, 0, 0] == 1.5 and d.value[0, 0, 1] == 0.0
    assert d.occupancy.tolist() == [[[True, False]]]


def test_slice_matches_trilinear_loop_when_fully_occupied(rng):
    value = rng.random((4, 3, 6))
    ref = rng.random((5, 7))
    out = slice(DenseGrid.full(value), ImageGray(ref), GridParams(2, 6))
    np.testing.assert_allclose(out.data, np.clip(_trilinear_loop(value, ref, 2), 0, 1), atol=1e-12)


def test_slice_ignores_empty_voxels():
    # one occupied voxel; every pixel whose stencil touches it reads exactly its value
    value = np.zeros((2, 2, 4))
    occ = np.zeros((2, 2, 4), dtype=bool)
    value[0, 0, 1] = 0.7
    occ[0, 0, 1] = True
    ref = np.full((3, 3), 1 / 3 + 0.1)
    out = slice(DenseGrid(value, occ), ImageGray(ref), GridParams(2, 4))
    assert out.data[0, 0] == pytest.approx(0.7)


def test_slice_dims_mismatch():
    with pytest.raises(ValueError):
        slice(DenseGrid.full(np.zeros((3, 3, 4))), ImageGray(np.zeros((4, 4))), GridParams(2, 4))


@given(st.integers(2, 10), st.integers(2, 10), st.sampled_from([8, 16, 32, 64]), st.integers(0, 2**31))
def test_identity_at_unit_spatial_rate(h, w, bins, seed):
    img = np.random.default_rng(seed).random((h, w))
    p = GridParams(1, bins)
    out = slice(normalize(lift_gray(ImageGray(img), p)), ImageGray(img), p)
    assert np.abs(out.data - img).max() <= 1 / (2 * (bins - 1)) + 1e-12


def test_constant_image_reconstructs_exactly():
    img = np.full((6, 6), 0.3)
    for sr_s in (1, 2, 3):
        p = GridParams(sr_s, 16)
        out = slice(normalize(lift_gray(ImageGray(img), p)), ImageGray(img), p)
        np.testing.assert_array_equal(out.data, img)


def test_spread_matrix_columns_sum_to_one_and_match_gaussian():
    m = gaussian_spread_matrix(20, 1.5)
    np.testing.assert_allclose(m.sum(axis=0), 1.0)
    col = m[:, 10]
    d = np.arange(20) - 10
    ref = np.where(np.abs(d) <= 5, np.exp(-d**2 / (2 * 1.5**2)), 0.0)
    np.testing.assert_allclose(col, ref / ref.sum())
    np.testing.assert_array_equal(gaussian_spread_matrix(4, 0.0), np.eye(4))


def test_blur_conserves_mass_and_zero_sigma_is_identity(rng):
    g = lift_gray(ImageGray(rng.random((10, 12))), GridParams(2, 8))
    b = grid_blur(g, 1.3, 0.8)
    assert b.weight.sum() == pytest.approx(g.weight.sum(), rel=1e-12)
    assert b.value_sum.sum() == pytest.approx(g.value_sum.sum(), rel=1e-12)
    same = grid_blur(g, 0.0, 0.0)
    np.testing.assert_array_equal(same.weight, g.weight)


def test_filter_smooths_within_region(rng):
    img = np.clip(0.3 + 0.02 * rng.standard_normal((16, 16)), 0, 1)
    out = bilateral_filter(ImageGray(img), GridParams(1, 32), 2.0, 2.0)
    assert out.data.std() < img.std()


def test_grid_dump_round_trip(tmp_path, rng):
    g = lift_gray(ImageGray(rng.random((7, 5))), GridParams(2, 8))
    write_grid(g, tmp_path / "g.bgrd")
    back = read_grid(tmp_path / "g.bgrd")
    np.testing.assert_array_equal(back.value_sum, g.value_sum)
    np.testing.assert_array_equal(back.weight, g.weight)
    raw = (tmp_path / "g.bgrd").read_bytes()
    (tmp_path / "bad").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        read_grid(tmp_path / "bad")
    (tmp_path / "short").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        read_grid(tmp_path / "short")


def test_summary_fields(rng):
    g = lift_gray(ImageGray(rng.random((4, 4))), GridParams(2, 4))
    s = g.summary()
    assert s.startswith("dims=2x2x4\n") and "weight_total=16\n" in s
