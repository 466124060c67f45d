import numpy as np
import pytest

from datamodel.errors import ConfigurationError, ShapeError
from datamodel.types import AnalyzerConfig, ResponseTable, SpectralCube, WavelengthGrid
from optics.psf import PsfStack
from processing.encoder import (
    ForwardModel, MeasurementSet, NoiseKind, NoiseModel, acquire_four, apply_noise, derive_seeds,
    encode,
)
from processing.polarimetry import PolarizedScene
from storage.scenes import color_checker, polar_target, unpolarized


def test_delta_psf_with_unit_response_sums_bands(random_cube):
    grid = random_cube.grid
    image = encode(random_cube, PsfStack.delta(grid), ResponseTable.unit(grid))
    expected = random_cube.data.sum(axis=2)
    for c in range(3):
        assert np.allclose(image.channel(c), expected, rtol=0, atol=1e-12)


def test_encoder_is_linear(rng, desk_grid):
    psfs = PsfStack.gaussian(desk_grid, 8, np.linspace(0.8, 2.0, desk_grid.count))
    response = ResponseTable.default(desk_grid)
    x = SpectralCube(rng.random((16, 16, desk_grid.count)), desk_grid)
    y = SpectralCube(rng.random((16, 16, desk_grid.count)), desk_grid)
    combined = SpectralCube(2.0 * x.data + 3.0 * y.data, desk_grid)
    lhs = encode(combined, psfs, response).data
    rhs = 2.0 * encode(x, psfs, response).data + 3.0 * encode(y, psfs, response).data
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_zero_scene_gives_zero_image(desk_grid):
    psfs = PsfStack.gaussian(desk_grid, 8, 1.0)
    image = encode(SpectralCube.zeros(8, 8, desk_grid), psfs, ResponseTable.default(desk_grid))
    assert np.all(image.data == 0.0)


def test_forward_and_adjoint_agree(rng, desk_grid):
    # asymmetric kernels so that flipping matters
    psfs = PsfStack(desk_grid, rng.random((desk_grid.count, 6, 6)))
    model = ForwardModel(psfs, ResponseTable.default(desk_grid))
    x = rng.standard_normal((20, 18, desk_grid.count))
    y = rng.standard_normal((20, 18, 3))
    lhs = float((model.forward(x) * y).sum())
    rhs = float((x * model.adjoint(y)).sum())
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_noise_is_seeded(rng):
    clean = rng.random((16, 16, 3))
    noise = NoiseModel(kind=NoiseKind.GAUSSIAN, seed=3)
    assert np.array_equal(apply_noise(clean, noise), apply_noise(clean, noise))
    assert not np.array_equal(apply_noise(clean, noise), apply_noise(clean, noise.with_seed(4)))


def test_no_noise_leaves_image_unchanged(rng):
    clean = rng.random((8, 8, 3))
    assert np.array_equal(apply_noise(clean, NoiseModel.none()), clean)


def test_poisson_gaussian_output_is_nonnegative(rng):
    clean = rng.random((32, 32, 3)) * 0.01
    noisy = apply_noise(clean, NoiseModel(kind=NoiseKind.POISSON_GAUSSIAN, sigma=0.5, peak=50.0, seed=1))
    assert np.all(noisy >= 0.0)
    assert not np.array_equal(noisy, clean)


def test_bit_depth_quantizes_to_levels(rng):
    clean = rng.random((16, 16, 3))
    quantized = apply_noise(clean, NoiseModel(kind=NoiseKind.NONE, sigma=0.0, bit_depth=2))
    levels = np.unique(np.round(quantized / clean.max() * 3, 9))
    assert set(levels.tolist()) <= {0.0, 1.0, 2.0, 3.0}


def test_noise_model_validation():
    with pytest.raises(ConfigurationError):
        NoiseModel(sigma=-0.1)
    with pytest.raises(ConfigurationError):
        NoiseModel(kind=NoiseKind.POISSON_GAUSSIAN, peak=0.0)


def test_unpolarized_scene_gives_four_identical_images(desk_grid):
    scene = PolarizedScene(unpolarized(color_checker(16, 16, desk_grid)))
    psfs = PsfStack.gaussian(desk_grid, 8, 1.2)
    measurements = acquire_four(scene, psfs, ResponseTable.default(desk_grid))
    first = measurements.images[0].data
    for image in measurements.images[1:]:
        assert np.array_equal(image.data, first)


def test_four_exposures_use_distinct_seeds():
    seeds = derive_seeds(42)
    assert len(set(seeds)) == 4
    assert seeds == derive_seeds(42)
    assert seeds != derive_seeds(43)


def test_grid_mismatch_is_rejected(desk_grid):
    cube = SpectralCube.zeros(8, 8, desk_grid)
    psfs = PsfStack.delta(WavelengthGrid())
    with pytest.raises(ShapeError):
        encode(cube, psfs, ResponseTable.default(desk_grid))


def test_measurement_set_rejects_duplicate_analyzers(desk_grid):
    image = encode(SpectralCube.zeros(4, 4, desk_grid), PsfStack.delta(desk_grid), ResponseTable.default(desk_grid))
    configs = (AnalyzerConfig.LINEAR_0, AnalyzerConfig.LINEAR_0,
               AnalyzerConfig.LINEAR_45, AnalyzerConfig.QWP0_LINEAR_45)
    with pytest.raises(ConfigurationError):
        MeasurementSet((image,) * 4, configs)
    with pytest.raises(ShapeError):
        MeasurementSet((image,) * 3)


@pytest.mark.parametrize("band", [0, 2, 4])
def test_single_impulse_lands_as_the_weighted_kernel(desk_grid, band):
    psfs = PsfStack.gaussian(desk_grid, 8, np.linspace(0.6, 1.6, desk_grid.count))
    response = ResponseTable.default(desk_grid)
    data = np.zeros((24, 24, desk_grid.count))
    data[10, 10, band] = 1.0
    image = encode(SpectralCube(data, desk_grid), psfs, response)

    for c in range(3):
        expected = np.zeros((24, 24))
        expected[6:14, 6:14] = response.weights[band, c] * psfs.kernels[band]
        assert np.allclose(image.channel(c), expected, rtol=0, atol=1e-12)


def test_horizontal_scene_is_dark_behind_the_vertical_analyzer(desk_grid):
    scene = PolarizedScene(polar_target(16, 16, desk_grid, angles_deg=(0, 0, 0, 0), dolp=1.0))
    psfs = PsfStack.gaussian(desk_grid, 8, 1.2)
    measurements = acquire_four(scene, psfs, ResponseTable.default(desk_grid))
    assert np.allclose(measurements.images[1].data, 0.0, rtol=0, atol=1e-12)
    assert measurements.images[0].data.max() > 0


def test_orthogonal_analyzers_add_up_to_the_intensity_image(desk_grid):
    stokes = polar_target(16, 16, desk_grid, dolp=0.7)
    psfs = PsfStack.gaussian(desk_grid, 8, np.linspace(0.8, 2.0, desk_grid.count))
    response = ResponseTable.default(desk_grid)
    measurements = acquire_four(PolarizedScene(stokes), psfs, response)

    total = measurements.images[0].data + measurements.images[1].data
    expected = encode(stokes.intensity(), psfs, response).data
    assert np.allclose(total, expected, rtol=1e-10, atol=1e-12)
