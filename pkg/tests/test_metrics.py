import math

import numpy as np
import pytest

from iidm.metrics import CSV_COLUMNS, PSNR_INF, MetricReport, evaluate, pixel_metrics, psnr, ssim
from iidm.raster import FOREST, Raster

from reference import loop_pixel_metrics, loop_psnr, loop_ssim


def random_pair(rng, h=16, w=16):
    truth = rng.uniform(0, 50, (h, w))
    pred = truth + rng.normal(0, 5, (h, w))
    mask = np.where(rng.random((h, w)) < 0.7, FOREST, 0).astype(np.uint8)
    mask[0, 0] = FOREST
    return pred, truth, mask


def test_pixel_metrics_hand_example():
    mae, mse, rmse = pixel_metrics([[1.0, 2.0], [3.0, 4.0]], [[1.0, 2.0], [3.0, 6.0]])
    assert (mae, mse, rmse) == (0.5, 1.0, 1.0)


def test_mask_excludes_pixels():
    pred = np.array([[1.0, 100.0]])
    truth = np.array([[2.0, 0.0]])
    mask = np.array([[FOREST, 0]], dtype=np.uint8)
    assert pixel_metrics(pred, truth, mask) == (1.0, 1.0, 1.0)
    assert pixel_metrics(pred, truth, np.array([[True, False]])) == (1.0, 1.0, 1.0)


def test_mask_values_other_than_255_are_excluded():
    mask = np.array([[FOREST, 1]], dtype=np.uint8)
    assert pixel_metrics([[0.0, 9.0]], [[1.0, 0.0]], mask)[0] == 1.0


def test_empty_mask_and_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="no pixels"):
        pixel_metrics(np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2), np.uint8))
    with pytest.raises(ValueError, match="shape"):
        pixel_metrics(np.ones((2, 2)), np.ones((2, 3)))
    with pytest.raises(ValueError, match="single-band"):
        pixel_metrics(np.ones((2, 2, 3)), np.ones((2, 2, 3)))


def test_psnr_examples():
    assert psnr(np.ones((4, 4)), np.ones((4, 4))) == PSNR_INF
    truth = np.full((2, 2), 10.0)
    assert psnr(truth + 1.0, truth) == pytest.approx(20.0, abs=1e-12)
    assert psnr(truth + 1.0, truth, max_val=100.0) == pytest.approx(40.0, abs=1e-12)
    with pytest.raises(ValueError):
        psnr(truth, truth, max_val=0.0)


def test_ssim_identity_is_exactly_one():
    a = np.random.default_rng(0).uniform(0, 30, (16, 16))
    assert ssim(a, a) == 1.0
    assert ssim(a, a, window="global") == 1.0


def test_ssim_constant_images():
    # mean term alone: (2*1*2 + c1) / (1 + 4 + c1) with L = 2
    c1 = (0.01 * 2) ** 2
    got = ssim(np.ones((8, 8)), np.full((8, 8), 2.0), window="global")
    assert got == pytest.approx((4 + c1) / (5 + c1), abs=1e-15)


def test_ssim_constant_shift_hand_value():
    mu, d, c1 = 0.5, 0.1, 0.01 ** 2
    expected = (2 * mu * (mu + d) + c1) / (mu ** 2 + (mu + d) ** 2 + c1)
    got = ssim(np.full((8, 8), mu + d), np.full((8, 8), mu), L=1.0)
    assert got == pytest.approx(expected, abs=1e-15)


def test_ssim_window_too_large():
    with pytest.raises(ValueError, match="window"):
        ssim(np.ones((4, 4)), np.ones((4, 4)))


def test_ssim_skips_empty_edge_tiles():
    rng = np.random.default_rng(2)
    pred, truth = rng.random((12, 12)), rng.random((12, 12))
    mask = np.zeros((12, 12), np.uint8)
    mask[:8, :8] = FOREST
    assert ssim(pred, truth, mask=mask) == pytest.approx(ssim(pred[:8, :8], truth[:8, :8], L=truth[:8, :8].max()))


def test_metrics_match_loop_reference_on_100_pairs():
    rng = np.random.default_rng(42)
    for _ in range(100):
        pred, truth, mask = random_pair(rng)
        inc = mask == FOREST
        ref = loop_pixel_metrics(pred, truth, inc)
        got = pixel_metrics(pred, truth, mask)
        np.testing.assert_allclose(got, ref, rtol=0, atol=1e-9)
        L = float(truth[inc].max())
        assert abs(psnr(pred, truth, mask=mask) - loop_psnr(pred, truth, inc, L)) < 1e-6
        assert abs(ssim(pred, truth, mask=mask) - loop_ssim(pred, truth, inc, L)) < 1e-9


def test_evaluate_report_and_csv_row():
    truth = Raster.f32(np.arange(64.0).reshape(8, 8))
    rep = evaluate(truth, truth)
    assert isinstance(rep, MetricReport)
    assert rep.mae == 0 and rep.psnr == PSNR_INF and rep.ssim == 1.0
    assert rep.n_pixels == 64 and not rep.mask_applied
    row = rep.csv_row("x")
    assert len(row) == len(CSV_COLUMNS)
    assert row[0] == "x" and row[4] == "inf"
    assert math.isinf(float(row[4]))
