import json

import numpy as np
import pytest

from config import PSNR_CAP_DB
from datamodel.errors import DomainError, ShapeError
from evaluation.metrics import (
    cube_ssim, evaluate, mean_pixel_fidelity, mse, per_band_psnr, psnr, spectral_fidelity, ssim,
)


def test_psnr_of_known_error():
    a = np.zeros((10, 10))
    b = np.full((10, 10), 0.01)
    assert psnr(a, b, peak=1.0) == pytest.approx(40.0)


def test_psnr_of_identical_images_is_capped(rng):
    a = rng.random((8, 8))
    assert psnr(a, a) == PSNR_CAP_DB


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)), peak=1.0)


def test_ssim_of_identical_images(rng):
    a = rng.random((32, 32))
    assert ssim(a, a) == pytest.approx(1.0)
    assert ssim(a, 1.0 - a) < 0.5


def test_ssim_rejects_images_smaller_than_window():
    with pytest.raises(ShapeError):
        ssim(np.ones((5, 5)), np.ones((5, 5)), peak=1.0)


def test_cube_ssim_averages_bands(random_cube):
    assert cube_ssim(random_cube, random_cube) == pytest.approx(1.0)


def test_spectral_fidelity():
    a = np.array([0.2, 0.5, 1.0])
    assert spectral_fidelity(a, 3.0 * a) == pytest.approx(100.0)
    assert spectral_fidelity([1.0, 0.0], [0.0, 1.0]) == 0.0
    with pytest.raises(DomainError):
        spectral_fidelity([0.0, 0.0], [1.0, 2.0])


def test_mean_pixel_fidelity_skips_dark_pixels(desk_grid):
    a = np.ones((2, 2, desk_grid.count))
    b = a.copy()
    b[0, 0] = 0.0
    assert mean_pixel_fidelity(a, b) == pytest.approx(100.0)


def test_per_band_psnr_uses_common_peak(random_cube):
    noisy = random_cube.data + 0.01
    values = per_band_psnr(random_cube, noisy, peak=1.0)
    assert len(values) == random_cube.grid.count
    assert values == pytest.approx([40.0] * len(values))
    assert mse(random_cube, noisy) == pytest.approx(1e-4)


def test_report_json(random_cube):
    report = evaluate(random_cube, random_cube)
    data = json.loads(report.to_json())
    assert data["psnr"] == PSNR_CAP_DB
    assert data["ssim"] == pytest.approx(1.0)
    assert data["fidelity_percent"] == pytest.approx(100.0)
    assert len(data["per_band_psnr"]) == random_cube.grid.count


def test_report_table_color(random_cube):
    report = evaluate(random_cube, random_cube)
    plain = report.to_table(color=False)
    assert "\033[" not in plain
    assert "PSNR (dB)" in plain
    assert report.to_table(color=True).startswith("\033[1m")


def test_ssim_of_constant_images_is_the_luminance_term():
    a, b = np.full((16, 16), 0.2), np.full((16, 16), 0.6)
    c1 = 0.01 ** 2
    luminance = (2 * 0.2 * 0.6 + c1) / (0.2 ** 2 + 0.6 ** 2 + c1)
    assert ssim(a, b, peak=1.0) == pytest.approx(luminance, rel=1e-6)
    assert ssim(a, a, peak=1.0) == pytest.approx(1.0)
