import numpy as np
import pytest

from datamodel.errors import ConfigurationError, DomainError
from config import DEPTH_MAX, PIXEL_PITCH
from datamodel.types import WavelengthGrid
from optics.doe import HeightMap, HeightProfile, rasterize
from optics.psf import (
    OpticalConfig, PhaseConvention, PsfStack, field_at_element, pad_kernel, psf, radius_squared,
    refractive_index, unpad_kernel,
)

N = 64
CROP = 16


def _relative_l2(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def test_fused_silica_index_at_sodium_d_line():
    assert refractive_index(587.6) == pytest.approx(1.4585, abs=5e-4)


def test_index_decreases_with_wavelength():
    n = refractive_index(np.array([400.0, 550.0, 700.0]))
    assert n.shape == (3,)
    assert n[0] > n[1] > n[2] > 1.0


def test_index_outside_validity_range():
    with pytest.raises(DomainError):
        refractive_index(250.0)
    with pytest.raises(DomainError):
        refractive_index([500.0, 1200.0])


def test_flat_profile_gives_normalized_kernels(desk_grid):
    height_map = rasterize(HeightProfile.constant(0.0), n=N)
    stack = psf(OpticalConfig(), height_map, desk_grid, crop=CROP)
    assert stack.kernels.shape == (desk_grid.count, CROP, CROP)
    assert np.all(stack.kernels >= 0)
    assert np.allclose(stack.kernels.sum(axis=(1, 2)), 1.0, rtol=0, atol=1e-12)
    assert np.all((stack.energy_fraction > 0) & (stack.energy_fraction <= 1.0 + 1e-12))


def test_psf_is_invariant_under_quarter_turns(desk_grid):
    height_map = rasterize(HeightProfile.random(seed=11), n=N)
    stack = psf(OpticalConfig(), height_map, desk_grid, crop=CROP)
    for b, kernel in enumerate(stack.kernels):
        # rows/columns at offset -k/2 have no partner inside the crop
        core = kernel[1:, 1:]
        for turns in (1, 2, 3):
            error = _relative_l2(np.rot90(core, turns), core)
            assert error <= 1e-6, f"band {b}, {turns} quarter turn(s): relative L2 {error:.2e}"


def test_in_focus_plane_wave_peaks_at_center():
    grid = WavelengthGrid.single(550.0)
    config = OpticalConfig(z=0.05, f=0.05, convention=PhaseConvention.PHYSICAL)
    stack = psf(config, rasterize(HeightProfile.constant(0.0), n=N), grid, crop=CROP)
    peak = np.unravel_index(np.argmax(stack.kernels[0]), stack.kernels[0].shape)
    assert peak == (CROP // 2, CROP // 2)


def test_crop_larger_than_grid_is_rejected(desk_grid):
    height_map = rasterize(HeightProfile.constant(0.0), n=N)
    with pytest.raises(ConfigurationError):
        psf(OpticalConfig(), height_map, desk_grid, crop=2 * N)
    with pytest.raises(ConfigurationError):
        psf(OpticalConfig(), height_map, desk_grid, crop=15)


def test_widen_grows_the_crop_until_energy_is_kept(desk_grid):
    height_map = rasterize(HeightProfile.random(seed=2), n=N)
    stack = psf(OpticalConfig(), height_map, desk_grid, crop=4, widen=True)
    assert stack.k >= 4
    assert stack.k == N or np.all(stack.energy_fraction >= 0.99)


def test_parallel_bands_match_sequential(desk_grid):
    height_map = rasterize(HeightProfile.random(seed=8), n=N)
    one = psf(OpticalConfig(), height_map, desk_grid, crop=CROP, max_workers=1)
    four = psf(OpticalConfig(), height_map, desk_grid, crop=CROP, max_workers=4)
    assert np.array_equal(one.kernels, four.kernels)


def test_pad_and_unpad_are_adjoint(rng):
    kernel = rng.random((8, 8))
    grid = rng.standard_normal((20, 20))
    lhs = float((pad_kernel(kernel, grid.shape) * grid).sum())
    rhs = float((kernel * unpad_kernel(grid, 8)).sum())
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_pad_kernel_puts_center_at_origin():
    stack = PsfStack.delta(WavelengthGrid.single(500.0), k=4)
    padded = stack.to_padded(0, (8, 8))
    assert padded[0, 0] == 1.0
    assert padded.sum() == 1.0


def test_psf_stack_normalizes_and_validates(desk_grid):
    kernels = np.ones((desk_grid.count, 4, 4)) * 3.0
    stack = PsfStack(desk_grid, kernels)
    assert np.allclose(stack.kernels.sum(axis=(1, 2)), 1.0)
    assert stack.center == 2
    with pytest.raises(ConfigurationError):
        PsfStack(desk_grid, -kernels)
    with pytest.raises(ConfigurationError):
        PsfStack(desk_grid, np.ones((desk_grid.count, 3, 3)))


def test_phase_conventions_differ(desk_grid):
    height_map = rasterize(HeightProfile.constant(0.0), n=N)
    literal = psf(OpticalConfig(convention=PhaseConvention.PAPER_LITERAL), height_map, desk_grid, crop=CROP)
    physical = psf(OpticalConfig(convention=PhaseConvention.PHYSICAL), height_map, desk_grid, crop=CROP)
    assert not np.allclose(literal.kernels, physical.kernels)


@pytest.mark.parametrize("convention, scale", [(PhaseConvention.PAPER_LITERAL, 1.0),
                                               (PhaseConvention.PHYSICAL, 0.5)])
def test_flat_element_leaves_a_spherical_wave(convention, scale):
    height_map = HeightMap(np.zeros((N, N)), PIXEL_PITCH, np.ones((N, N), dtype=bool))
    config = OpticalConfig(z=1.0, convention=convention)
    field = field_at_element(config, height_map, 550.0).values

    k = 2.0 * np.pi / 550e-9
    expected = np.exp(1j * k * scale * radius_squared(N, PIXEL_PITCH) / config.z)
    assert np.allclose(np.abs(field), 1.0)
    assert np.allclose(field, expected, rtol=0, atol=1e-12)


def test_field_is_dark_outside_the_aperture():
    height_map = rasterize(HeightProfile.random(seed=2), n=N)
    field = field_at_element(OpticalConfig(), height_map, 550.0).values
    assert np.all(field[~height_map.aperture_mask] == 0)
    assert np.allclose(np.abs(field[height_map.aperture_mask]), 1.0)


def test_global_height_offset_leaves_the_psf_unchanged(desk_grid):
    profile = HeightProfile.random(seed=4, depth_max=DEPTH_MAX / 2)
    lifted = HeightProfile(profile.w + DEPTH_MAX / 3)
    base = psf(OpticalConfig(), rasterize(profile, n=N), desk_grid, crop=CROP)
    shifted = psf(OpticalConfig(), rasterize(lifted, n=N), desk_grid, crop=CROP)
    for b in range(desk_grid.count):
        assert _relative_l2(shifted.kernels[b], base.kernels[b]) <= 1e-10
