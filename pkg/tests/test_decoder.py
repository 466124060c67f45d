import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from config import DEPTH_MAX
from datamodel.errors import ConfigurationError, SingularityError
from datamodel.types import RGBImage, ResponseTable, SpectralCube, WavelengthGrid
from evaluation.metrics import psnr
from optics.doe import HeightProfile, quantize_profile, rasterize
from optics.psf import OpticalConfig, PhaseConvention, PsfStack, psf
from processing.decoder import (
    DeconvConfig, FusionMode, deconv_all, flat_spectrum_baseline, fuse, fusion_weights, reconstruct,
    reconstruct_polarimetric, refine, wiener_band,
)
from processing.encoder import ForwardModel, acquire_four, encode
from processing.polarimetry import PolarizedScene, analyzer_all, mean_aolp
from storage.scenes import circular_target, color_checker, half_masks, polar_target, quadrant_masks

SINGLE = WavelengthGrid.single(550.0)
AOLP_TOLERANCE = 0.01
CIRCULAR_RATIO = 0.8
BASELINE_ITERATIONS = 50


def _axial_difference(a: float, b: float) -> float:
    return abs((a - b + np.pi / 2) % np.pi - np.pi / 2)


def _padded_scene(rng, size=32, margin=6, bands=1):
    # zero border wider than half the kernel, so linear and circular convolution agree
    data = np.zeros((size, size, bands))
    data[margin:size - margin, margin:size - margin] = rng.random((size - 2 * margin, size - 2 * margin, bands))
    return data


def _circular_ratios(stokes, band, margin):
    s0, s3 = stokes.s0[:, :, band], stokes.s3[:, :, band]
    left, right = half_masks(*s0.shape, margin=margin)
    return s3[left].mean() / s0[left].mean(), -s3[right].mean() / s0[right].mean()


def test_wiener_inverts_a_well_conditioned_blur(rng):
    truth = SpectralCube(_padded_scene(rng), SINGLE)
    psfs = PsfStack.gaussian(SINGLE, 8, 0.7)
    measurement = encode(truth, psfs, ResponseTable.unit(SINGLE))
    estimate = wiener_band(measurement.channel(0), psfs.kernels[0], epsilon=1e-9)
    assert psnr(truth.data[:, :, 0], estimate) >= 60.0


def test_wiener_undoes_convolution_as_epsilon_vanishes(rng):
    truth = SpectralCube(_padded_scene(rng), SINGLE)
    psfs = PsfStack.gaussian(SINGLE, 8, 0.7)
    measurement = encode(truth, psfs, ResponseTable.unit(SINGLE))
    estimate = wiener_band(measurement.channel(0), psfs.kernels[0], epsilon=1e-12)
    error = np.linalg.norm(estimate - truth.data[:, :, 0]) / np.linalg.norm(truth.data)
    assert error <= 1e-6, f"relative error {error:.3e}"


def test_zero_spectral_bin_without_regularization():
    kernel = np.array([[0.5, 0.5], [0.0, 0.0]])
    with pytest.raises(SingularityError) as info:
        wiener_band(np.ones((8, 8)), kernel, epsilon=0.0)
    assert info.value.frequency_bin == (0, 4)


def test_all_zero_kernel_is_rejected():
    with pytest.raises(ConfigurationError, match="all-zero kernel"):
        wiener_band(np.ones((8, 8)), np.zeros((2, 2)), epsilon=1e-3)


def test_negative_epsilon_is_rejected():
    with pytest.raises(ConfigurationError):
        wiener_band(np.ones((8, 8)), np.ones((2, 2)) / 4, epsilon=-1e-3)
    with pytest.raises(ConfigurationError):
        DeconvConfig(epsilon=-1.0)


def test_deconv_all_of_a_dark_image_is_dark(desk_grid):
    psfs = PsfStack.gaussian(desk_grid, 8, np.linspace(0.6, 1.6, desk_grid.count))
    tensor = deconv_all(RGBImage(np.zeros((16, 16, 3))), psfs)
    assert tensor.shape == (16, 16, desk_grid.count, 3)
    assert not np.any(tensor)


def test_deconv_all_with_delta_kernels_copies_the_measurement(rng, desk_grid):
    measurement = RGBImage(rng.random((12, 10, 3)))
    tensor = deconv_all(measurement, PsfStack.delta(desk_grid), DeconvConfig(epsilon=0.0))
    for b in range(desk_grid.count):
        assert np.allclose(tensor[:, :, b, :], measurement.data, rtol=1e-10, atol=1e-12)


def test_matching_band_dominates_a_single_band_scene(rng, desk_grid):
    # the widest kernel belongs to the lit band; the scene is smooth and zero near the border
    band = desk_grid.count - 1
    data = np.zeros((32, 32, desk_grid.count))
    data[:, :, band] = gaussian_filter(_padded_scene(rng, margin=12)[:, :, 0], 2.0)
    psfs = PsfStack.gaussian(desk_grid, 8, np.linspace(0.6, 1.6, desk_grid.count))
    measurement = encode(SpectralCube(data, desk_grid), psfs, ResponseTable.default(desk_grid))

    energy = (deconv_all(measurement, psfs) ** 2).sum(axis=(0, 1, 3))
    assert np.all(energy[band] >= energy), f"band energies {energy}"


def test_response_weighted_fusion_weights():
    grid = WavelengthGrid.desk()
    response = ResponseTable.default(grid)
    weights = fusion_weights(response, FusionMode.RESPONSE_WEIGHTED)
    assert np.allclose(weights.sum(axis=1), 1.0)
    # proportional to the response within each band
    assert np.allclose(weights * response.weights.sum(axis=1, keepdims=True), response.weights)
    assert np.allclose(fusion_weights(response, FusionMode.CHANNEL_MEAN), 1.0 / 3.0)


def test_fusion_does_not_amplify_weak_channels(rng, desk_grid):
    truth = SpectralCube(rng.random((16, 16, desk_grid.count)), desk_grid)
    psfs = PsfStack.delta(desk_grid)
    response = ResponseTable.default(desk_grid)
    measurement = encode(truth, psfs, response)
    cube = reconstruct(measurement, psfs, response, DeconvConfig(epsilon=0.0))
    # each band estimate is a convex combination of channel values
    assert cube.data.max() <= measurement.data.max() + 1e-12


def test_band_without_response_cannot_be_fused(desk_grid):
    t = np.ones(desk_grid.count)
    t[2] = 0.0
    response = ResponseTable(desk_grid, t, np.ones((desk_grid.count, 3)))
    with pytest.raises(ConfigurationError, match="band 2"):
        fusion_weights(response, FusionMode.RESPONSE_WEIGHTED)


def test_delta_psf_single_band_is_reproduced(rng):
    truth = SpectralCube(rng.random((16, 16, 1)), SINGLE)
    response = ResponseTable.unit(SINGLE)
    psfs = PsfStack.delta(SINGLE)
    cube = reconstruct(encode(truth, psfs, response), psfs, response, DeconvConfig(epsilon=0.0))
    assert np.allclose(cube.data, truth.data, rtol=0, atol=1e-10)


def test_gain_calibration_recovers_the_scale(rng):
    truth = SpectralCube(rng.random((16, 16, 1)), SINGLE)
    response = ResponseTable.default(SINGLE)
    psfs = PsfStack.delta(SINGLE)
    cube = reconstruct(encode(truth, psfs, response), psfs, response, DeconvConfig(epsilon=0.0, iterations=1))
    assert np.allclose(cube.data, truth.data, rtol=0, atol=1e-10)


def test_refinement_objective_never_increases(rng, desk_grid):
    truth = rng.random((16, 16, desk_grid.count))
    psfs = PsfStack.gaussian(desk_grid, 8, np.linspace(0.6, 1.6, desk_grid.count))
    model = ForwardModel(psfs, ResponseTable.default(desk_grid))
    measurement = RGBImage(model.forward(truth))
    _, history = refine(np.full(truth.shape, 0.5), measurement, model, iterations=15)
    assert len(history) >= 2
    assert all(b <= a for a, b in zip(history, history[1:]))
    assert history[-1] < history[0]


def test_refinement_needs_measurement(desk_grid):
    tensor = np.zeros((4, 4, desk_grid.count, 3))
    with pytest.raises(ConfigurationError):
        fuse(tensor, ResponseTable.default(desk_grid), DeconvConfig(iterations=2))


def test_reconstruction_beats_flat_spectrum_baseline(desk_grid):
    truth = color_checker(32, 48, desk_grid)
    psfs = PsfStack.gaussian(desk_grid, 8, np.linspace(0.6, 1.6, desk_grid.count))
    response = ResponseTable.default(desk_grid)
    measurement = encode(truth, psfs, response)

    cube = reconstruct(measurement, psfs, response, DeconvConfig(iterations=BASELINE_ITERATIONS))
    baseline = flat_spectrum_baseline(measurement, desk_grid)
    assert psnr(truth, cube) > psnr(truth, baseline)


@pytest.mark.parametrize("make_target", [polar_target, circular_target])
def test_polarized_reconstruction_beats_flat_spectrum_baseline(desk_grid, make_target):
    scene = PolarizedScene(make_target(32, 32, desk_grid))
    psfs = PsfStack.gaussian(desk_grid, 8, np.linspace(0.6, 1.6, desk_grid.count))
    response = ResponseTable.default(desk_grid)
    measurements = acquire_four(scene, psfs, response)
    _, cubes = reconstruct_polarimetric(measurements, psfs, response,
                                        DeconvConfig(iterations=BASELINE_ITERATIONS))

    truth = np.stack([c.data for c in analyzer_all(scene)])
    estimate = np.stack([c.data for c in cubes])
    baseline = np.stack([flat_spectrum_baseline(m, desk_grid).data for m in measurements.images])
    assert psnr(truth, estimate) > psnr(truth, baseline)


def test_polar_target_angles_survive_encoding(desk_grid):
    target = polar_target(64, 64, desk_grid)
    psfs = PsfStack.gaussian(desk_grid, 8, 1.0)
    response = ResponseTable.default(desk_grid)
    measurements = acquire_four(PolarizedScene(target), psfs, response)
    stokes, cubes = reconstruct_polarimetric(measurements, psfs, response)
    assert len(cubes) == 4

    band = desk_grid.index_of(560.0)
    expected = (0.0, np.pi / 4, np.pi / 2, -np.pi / 4)
    for mask, angle in zip(quadrant_masks(64, 64, margin=10), expected):
        measured = mean_aolp(stokes, band, mask)
        assert _axial_difference(measured, angle) <= AOLP_TOLERANCE, f"expected {angle:.3f}, got {measured:.3f}"


def test_circular_handedness_is_recovered(desk_grid):
    target = circular_target(64, 64, desk_grid)
    psfs = PsfStack.gaussian(desk_grid, 8, 1.0)
    response = ResponseTable.default(desk_grid)
    stokes, _ = reconstruct_polarimetric(acquire_four(PolarizedScene(target), psfs, response), psfs, response,
                                         DeconvConfig(iterations=BASELINE_ITERATIONS))

    rcp, lcp = _circular_ratios(stokes, desk_grid.index_of(560.0), margin=6)
    assert rcp >= CIRCULAR_RATIO, f"RCP half |S3|/S0 = {rcp:.3f}"
    assert lcp >= CIRCULAR_RATIO, f"LCP half |S3|/S0 = {lcp:.3f}"


def test_circular_handedness_through_a_quantized_element(desk_grid):
    profile = quantize_profile(HeightProfile.random(seed=3, depth_max=DEPTH_MAX / 2), levels=16)
    height_map = rasterize(profile, n=64)
    optical = OpticalConfig(z=0.05, f=0.05, convention=PhaseConvention.PHYSICAL)
    psfs = psf(optical, height_map, desk_grid, crop=16)

    target = circular_target(96, 96, desk_grid)
    response = ResponseTable.default(desk_grid)
    stokes, _ = reconstruct_polarimetric(acquire_four(PolarizedScene(target), psfs, response), psfs, response,
                                         DeconvConfig(iterations=20))

    rcp, lcp = _circular_ratios(stokes, desk_grid.index_of(560.0), margin=10)
    assert rcp >= CIRCULAR_RATIO, f"RCP half |S3|/S0 = {rcp:.3f}"
    assert lcp >= CIRCULAR_RATIO, f"LCP half |S3|/S0 = {lcp:.3f}"
