import numpy as np
import pytest

from datamodel.errors import ConfigurationError, ShapeError
from datamodel.types import AnalyzerConfig, SpectralCube, StokesCube, WavelengthGrid
from processing.polarimetry import (
    PolarizedScene, analyzer_all, analyzer_intensity, clamp_physical, dolp_aolp, dop, mean_aolp,
    stokes_from_measurements,
)
from storage.scenes import polar_target, quadrant_masks

SINGLE = WavelengthGrid.single(550.0)
ROUND_TRIP_SCENES = 100


def _pixel(s0, s1, s2, s3, grid=SINGLE):
    ones = np.ones((1, 1, grid.count))
    return StokesCube(s0 * ones, s1 * ones, s2 * ones, s3 * ones, grid)


def _random_physical(rng, shape, grid):
    s0 = rng.uniform(0.1, 1.0, shape)
    direction = rng.standard_normal((3,) + shape)
    direction /= np.linalg.norm(direction, axis=0)
    degree = rng.uniform(0.0, 1.0, shape)
    s1, s2, s3 = direction * degree * s0
    return StokesCube(s0, s1, s2, s3, grid)


def test_stokes_round_trip_on_random_scenes(rng, desk_grid):
    for i in range(ROUND_TRIP_SCENES):
        truth = _random_physical(rng, (4, 4, desk_grid.count), desk_grid)
        recovered = stokes_from_measurements(*analyzer_all(PolarizedScene(truth)))
        error = np.abs(recovered.stacked() - truth.stacked()).max() / np.abs(truth.stacked()).max()
        assert error <= 1e-12, f"scene {i}: relative error {error:.2e}"


def test_horizontal_light_behind_each_analyzer():
    scene = PolarizedScene(_pixel(1.0, 1.0, 0.0, 0.0))
    values = [cube.data.item() for cube in analyzer_all(scene)]
    assert values == pytest.approx([1.0, 0.0, 0.5, 0.5])


def test_right_circular_light_is_blocked_by_fourth_analyzer():
    scene = PolarizedScene(_pixel(1.0, 0.0, 0.0, 1.0))
    assert analyzer_intensity(scene, AnalyzerConfig.QWP0_LINEAR_45).data.item() == pytest.approx(0.0)
    left = PolarizedScene(_pixel(1.0, 0.0, 0.0, -1.0))
    assert analyzer_intensity(left, AnalyzerConfig.QWP0_LINEAR_45).data.item() == pytest.approx(1.0)


def test_stokes_inversion_rejects_mismatched_shapes():
    a = SpectralCube(np.ones((2, 2, 1)), SINGLE)
    b = SpectralCube(np.ones((3, 2, 1)), SINGLE)
    with pytest.raises(ShapeError):
        stokes_from_measurements(a, a, a, b)


def test_dolp_aolp_of_partially_polarized_light():
    maps = dolp_aolp(_pixel(1.0, 0.5, 0.5, 0.0), band=0)
    assert maps.dolp.item() == pytest.approx(np.sqrt(0.5))
    assert maps.aolp.item() == pytest.approx(np.pi / 8)


def test_vertical_polarization_maps_to_plus_half_pi():
    for s2 in (0.0, -0.0):
        maps = dolp_aolp(_pixel(1.0, -1.0, s2, 0.0), band=0)
        assert maps.aolp.item() == pytest.approx(np.pi / 2)


def test_dark_pixels_are_zero():
    maps = dolp_aolp(_pixel(0.0, 0.0, 0.0, 0.0), band=0)
    assert maps.dolp.item() == 0.0
    assert maps.aolp.item() == 0.0
    assert dop(_pixel(0.0, 0.0, 0.0, 0.0), band=0).item() == 0.0


def test_band_out_of_range():
    with pytest.raises(ConfigurationError):
        dolp_aolp(_pixel(1.0, 0.0, 0.0, 0.0), band=3)


def test_dop_includes_circular_component():
    assert dop(_pixel(2.0, 0.0, 0.0, 1.0), band=0).item() == pytest.approx(0.5)


def test_clamp_projects_onto_physical_cone():
    clamped = clamp_physical(_pixel(1.0, 2.0, 0.0, 0.0))
    assert clamped.s0.item() == pytest.approx(1.5)
    assert clamped.s1.item() == pytest.approx(1.5)
    assert clamped.violation_count() == 0

    inside = _pixel(1.0, 0.3, 0.2, 0.1)
    assert np.array_equal(clamp_physical(inside).stacked(), inside.stacked())


def test_clamp_sends_negative_intensity_to_zero():
    clamped = clamp_physical(_pixel(-1.0, 0.5, 0.0, 0.0))
    assert clamped.s0.item() == 0.0
    assert clamped.s1.item() == 0.0


def test_mean_aolp_of_polar_target_quadrants(desk_grid):
    target = polar_target(32, 32, desk_grid)
    expected = (0.0, np.pi / 4, np.pi / 2, -np.pi / 4)
    for mask, angle in zip(quadrant_masks(32, 32), expected):
        assert mean_aolp(target, 0, mask) == pytest.approx(angle, abs=1e-9)
