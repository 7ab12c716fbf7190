import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from bgdepth import metrics
from bgdepth.imageio import DepthMap, ImageGray
from bgdepth.metrics import MetricReport


def _depth(rng, shape=(24, 24)):
    return DepthMap(rng.uniform(0.5, 10.0, shape))


def test_rmse_examples(rng):
    d = _depth(rng)
    assert metrics.rmse(d, d) == 0.0
    assert metrics.rmse(DepthMap(np.array([[2.0, 2.0]])), DepthMap(np.array([[1.0, 3.0]]))) == 1.0


def test_log10_examples(rng):
    d = _depth(rng)
    assert metrics.log10_error(d, d) == 0.0
    assert metrics.log10_error(DepthMap(np.array([[10.0]])), DepthMap(np.array([[1.0]]))) == 1.0


def test_log10_rejects_nonpositive_valid_depth():
    with pytest.raises(ValueError):
        metrics.log10_error(DepthMap(np.array([[1.0]])), DepthMap(np.array([[0.0]])))


def test_metrics_use_joint_mask(rng):
    gt = rng.uniform(1, 5, (12, 12))
    pred = rng.uniform(1, 5, (12, 12))
    gt[0] = 0.0
    pred[:, 0] = 0.0
    a, b = DepthMap(gt), DepthMap(pred)
    assert metrics.rmse(a, b) == pytest.approx(oracles.rmse_loop(gt, pred), abs=1e-12)
    assert metrics.log10_error(a, b) == pytest.approx(oracles.log10_loop(gt, pred), abs=1e-12)
    assert metrics.evaluate_pair(a, b).n_valid == 11 * 11


def test_no_valid_pixels_and_mismatch():
    z = DepthMap(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        metrics.rmse(z, z)
    with pytest.raises(ValueError):
        metrics.rmse(DepthMap(np.ones((4, 4))), DepthMap(np.ones((4, 5))))
    with pytest.raises(ValueError):
        metrics.derm(DepthMap(np.ones((4, 4))), DepthMap(np.ones((5, 4))))


@pytest.mark.parametrize("seed", range(3))
def test_rmse_and_log10_match_loop(seed):
    r = np.random.default_rng(seed)
    gt, pred = r.uniform(0.5, 10, (20, 30)), r.uniform(0.5, 10, (20, 30))
    assert abs(metrics.rmse(DepthMap(gt), DepthMap(pred)) - oracles.rmse_loop(gt, pred)) < 1e-12
    assert abs(metrics.log10_error(DepthMap(gt), DepthMap(pred)) - oracles.log10_loop(gt, pred)) < 1e-12


def test_gaussian_window():
    w = metrics.gaussian_window()
    assert w.shape == (11, 11)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(w, np.array(oracles.gauss_window()), atol=1e-16)


def test_ssim_map_matches_window_oracle(rng):
    x, y = rng.random((16, 18)), rng.random((16, 18))
    np.testing.assert_allclose(metrics.ssim_map(x, y), oracles.ssim_windows(x, y), atol=1e-9, rtol=0)


def test_mssim_examples(rng):
    x = rng.random((16, 16))
    assert metrics.mssim(ImageGray(x), ImageGray(x)) == pytest.approx(1.0, abs=1e-12)
    assert metrics.mssim(ImageGray(x), ImageGray(1.0 - x)) < 1.0
    with pytest.raises(ValueError):
        metrics.mssim(ImageGray(x[:10]), ImageGray(x[:10]))


def test_mssim_shift_changes_only_luminance(rng):
    # the contrast/structure factor is shift-invariant; the luminance factor moves with the local means
    x, y, c = rng.random((20, 20)) * 0.9, rng.random((20, 20)) * 0.9, 0.01
    g1 = metrics.gaussian_1d()
    c1 = (metrics.SSIM_K1) ** 2
    mx, my = metrics._filter_valid(x, g1), metrics._filter_valid(y, g1)

    def lum(a, b):
        return (2 * a * b + c1) / (a * a + b * b + c1)

    ratio = metrics.ssim_map(x + c, y + c) / metrics.ssim_map(x, y)
    np.testing.assert_allclose(ratio, lum(mx + c, my + c) / lum(mx, my), rtol=1e-9)
    # identical images stay exactly similar after any in-range shift
    assert metrics.mssim(ImageGray(x + c), ImageGray(x + c)) == pytest.approx(1.0, abs=1e-12)


def test_sobel_constant_and_step():
    assert not metrics.sobel_magnitude(np.full((5, 5), 0.3)).any()
    img = np.array([[0.0, 1.0, 1.0]] * 3)
    assert metrics.sobel_magnitude(img)[1, 1] == 4.0
    with pytest.raises(ValueError):
        metrics.sobel_magnitude(np.zeros((2, 5)))


def test_sobel_rotation(rng):
    a = rng.random((7, 9))
    np.testing.assert_allclose(metrics.sobel_magnitude(np.rot90(a)), np.rot90(metrics.sobel_magnitude(a)),
                               atol=1e-14)
    np.testing.assert_allclose(metrics.sobel_magnitude(a), oracles.sobel_loop(a), atol=1e-14)


def test_visualize(rng):
    d = rng.uniform(1, 9, (6, 6))
    d[0, 0] = 0.0
    v = metrics.visualize(DepthMap(d)).data
    np.testing.assert_allclose(v, oracles.visualize_loop(d), atol=1e-15)
    assert v[0, 0] == 0.0 and v.max() == 1.0
    assert not metrics.visualize(DepthMap(np.full((4, 4), 3.0))).data.any()


def test_f1_edge_cases():
    t = np.zeros((3, 3), bool)
    assert metrics.f1_score(t, t) == 1.0
    u = t.copy()
    u[1, 1] = True
    assert metrics.f1_score(u, t) == 0.0 and metrics.f1_score(t, u) == 0.0
    v = t.copy()
    v[0, 0] = True
    assert metrics.f1_score(u, v) == 0.0
    v[1, 1] = True
    # one of one truth found, one of two predictions correct
    assert metrics.f1_score(u, v) == pytest.approx(2 * 0.5 * 1.0 / 1.5)


def _step(shape, col, lo=2.0, hi=6.0):
    d = np.full(shape, lo)
    d[:, col:] = hi
    return DepthMap(d)


def test_derm_examples():
    gt = _step((32, 32), 16)
    assert metrics.derm(gt, gt) == 1.0
    assert metrics.derm(gt, DepthMap(np.full((32, 32), 4.0))) == 0.0


def test_derm_shifted_edge_matches_brute_force():
    gt, pred = _step((32, 32), 16), _step((32, 32), 18)
    got = metrics.derm(gt, pred)
    assert got == oracles.derm_loop(gt.data, pred.data)
    # two edge columns each, shifted by two: no overlap
    assert got == 0.0
    near = _step((32, 32), 17)
    assert metrics.derm(gt, near) == oracles.derm_loop(gt.data, near.data) == 0.5


def test_derm_matches_loop_on_random_maps(rng):
    for _ in range(3):
        gt, pred = rng.uniform(1, 9, (16, 16)), rng.uniform(1, 9, (16, 16))
        assert abs(metrics.derm(DepthMap(gt), DepthMap(pred)) - oracles.derm_loop(gt, pred)) < 1e-12


def test_derm_swap_leaves_f1_unchanged():
    # gt supplies the positives, but F1 = 2tp / (|gt| + |pred|) is symmetric anyway
    gt = _step((16, 16), 8)
    d = gt.data.copy()
    d[:8, 4:] = 6.0
    pred = DepthMap(d)
    p, q = oracles.edge_set(gt.data), oracles.edge_set(pred.data)
    assert p != q
    assert metrics.derm(gt, pred) == oracles.f1_sets(p, q) == metrics.derm(pred, gt)


positive = arrays(np.float64, (12, 12), elements=st.floats(0.5, 10.0))


@given(positive, positive)
def test_rmse_and_mssim_symmetric(a, b):
    A, B = DepthMap(a), DepthMap(b)
    assert metrics.rmse(A, B) == metrics.rmse(B, A)
    assert metrics.log10_error(A, B) == metrics.log10_error(B, A)
    assert metrics.mssim(ImageGray(a / 10), ImageGray(b / 10)) == pytest.approx(
        metrics.mssim(ImageGray(b / 10), ImageGray(a / 10)), abs=1e-15)


@given(positive, positive, positive)
def test_rmse_triangle(a, b, c):
    A, B, C = DepthMap(a), DepthMap(b), DepthMap(c)
    assert metrics.rmse(A, C) <= metrics.rmse(A, B) + metrics.rmse(B, C) + 1e-12


@given(positive, positive, st.floats(0.1, 10.0))
def test_derm_edge_masks_scale_invariant(a, b, k):
    for d in (a, b):
        np.testing.assert_array_equal(metrics.edge_mask(DepthMap(d)), metrics.edge_mask(DepthMap(d * k)))
    assert 0.0 <= metrics.derm(DepthMap(a), DepthMap(b)) <= 1.0


def test_report_identity_and_tsv(rng):
    d = _depth(rng)
    r = metrics.evaluate_pair(d, d)
    assert (r.rmse, r.log10_err, r.derm) == (0.0, 0.0, 1.0)
    assert r.mssim == pytest.approx(1.0, abs=1e-9)
    head = MetricReport.tsv_header("id").split("\t")
    assert head == ["id", "RMSE↓", "log10↓", "mSSIM↑", "DERM↑", "n_valid"]
    assert r.to_tsv("x").count("\t") == 5
    assert "rmse=0.0\n" in r.to_keyvalue()
    m = MetricReport.mean([r, MetricReport(2.0, 0.5, 0.5, 0.0, 3)])
    assert (m.rmse, m.derm, m.n_valid) == (1.0, 0.5, 24 * 24 + 3)
