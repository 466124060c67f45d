import numpy as np
import pytest

from config import DEPTH_MAX
from datamodel.errors import ConfigurationError
from optics.doe import (
    HeightProfile, quantize, quantize_profile, perturb_fabrication, rasterize, rasterize_adjoint,
    rasterize_values, reachable_rings, ring_indices,
)

LEVELS = 16
STEP = DEPTH_MAX / (LEVELS - 1)


def test_ring_index_follows_radius_on_default_grid():
    idx = ring_indices(1024, 512)
    assert idx[512, 512] == 0
    assert idx[512, 512 + 300] == 300
    assert idx[512 + 3, 512 + 4] == 5
    # corners lie outside the aperture
    assert idx[0, 0] == -1


def test_rasterize_is_constant_on_each_ring():
    profile = HeightProfile.random(seed=3, length=32)
    height_map = rasterize(profile, n=64)
    idx = ring_indices(64, 32)
    for ring in np.unique(idx[idx >= 0]):
        values = height_map.h[idx == ring]
        assert np.all(values == profile.w[ring]), f"ring {ring} holds {np.unique(values).size} values"
    assert np.all(height_map.h[idx < 0] == 0.0)


def test_rasterize_outside_aperture_is_zero():
    height_map = rasterize(HeightProfile.constant(DEPTH_MAX / 2, length=32), n=64)
    assert height_map.h[0, 0] == 0.0
    assert not height_map.aperture_mask[0, 0]
    assert height_map.h[32, 32] == pytest.approx(DEPTH_MAX / 2)


def test_rasterize_scales_radius_on_smaller_grids():
    idx = ring_indices(128, 512)
    assert idx[64, 64 + 10] == 80
    assert idx[0, 64] == 511   # exact rim folds onto the last entry


def test_odd_grid_is_rejected():
    with pytest.raises(ConfigurationError):
        ring_indices(63, 32)


def test_rasterize_adjoint_consistency(rng):
    w = rng.random(512)
    grad_map = rng.standard_normal((128, 128))
    h, _ = rasterize_values(w, 128)
    lhs = float((h * grad_map).sum())
    rhs = float((w * rasterize_adjoint(grad_map, 512)).sum())
    assert abs(lhs - rhs) <= 1e-10 * float(np.abs(h * grad_map).sum())


def test_reachable_rings_cover_full_profile_at_default_scale():
    rings = reachable_rings(1024, 512)
    assert rings[0] == 0
    assert rings[-1] == 511
    assert rings.size == 512


def test_quantize_snaps_to_levels():
    height_map = quantize(rasterize(HeightProfile.random(seed=1, length=32), n=64), LEVELS)
    levels = np.unique(np.round(height_map.h / STEP, 9))
    assert levels.size <= LEVELS
    assert np.allclose(levels, np.round(levels))
    assert height_map.levels == LEVELS


def test_quantize_is_idempotent():
    once = quantize(rasterize(HeightProfile.random(seed=2, length=32), n=64))
    twice = quantize(once)
    assert np.array_equal(once.h, twice.h)


def test_quantize_profile_commutes_with_rasterize():
    profile = HeightProfile.random(seed=4, length=32)
    a = rasterize(quantize_profile(profile), n=64).h
    b = quantize(rasterize(profile, n=64)).h
    assert np.allclose(a, b, rtol=0, atol=1e-18)


def test_quantize_rejects_single_level():
    with pytest.raises(ConfigurationError):
        quantize(rasterize(HeightProfile.constant(0.0, length=32), n=64), levels=1)


def test_perturbation_moves_each_level_together():
    base = quantize(rasterize(HeightProfile.random(seed=5, length=32), n=64))
    noisy = perturb_fabrication(base, step_error=40e-9, seed=7)
    shift = noisy.h - base.h
    level = np.round(base.h / STEP).astype(int)
    inside = base.aperture_mask
    for k in np.unique(level[inside]):
        values = shift[inside & (level == k)]
        assert np.allclose(values, values[0], rtol=0, atol=1e-20)
    assert np.abs(shift).max() <= 40e-9 + 1e-18
    assert np.all(shift[~inside] == 0.0)


def test_perturbation_is_seeded():
    base = quantize(rasterize(HeightProfile.random(seed=5, length=32), n=64))
    assert np.array_equal(perturb_fabrication(base, seed=9).h, perturb_fabrication(base, seed=9).h)
    assert not np.array_equal(perturb_fabrication(base, seed=9).h, perturb_fabrication(base, seed=10).h)


def test_perturbation_needs_quantized_map():
    with pytest.raises(ConfigurationError):
        perturb_fabrication(rasterize(HeightProfile.constant(0.0, length=32), n=64))


def test_profile_bounds_are_enforced():
    with pytest.raises(ConfigurationError):
        HeightProfile(np.full(8, 2 * DEPTH_MAX))
    with pytest.raises(ConfigurationError):
        HeightProfile(np.full(8, -1e-9))


def test_center_pixel_comes_from_the_first_entry():
    w = np.zeros(512)
    w[0] = 1e-6
    h = rasterize(HeightProfile(w)).h
    assert h[512, 512] == 1e-6
    assert np.count_nonzero(h) == 1


def test_rasterize_has_four_reflection_symmetry():
    h = rasterize(HeightProfile.random(seed=8)).h
    assert h[512 + 100, 512] == h[512, 512 + 100] == h[512 - 100, 512] == h[512, 512 - 100]
    # rows and columns 1..n-1 are symmetric about the center pixel
    core = h[1:, 1:]
    assert np.array_equal(core, core[::-1, :])
    assert np.array_equal(core, core[:, ::-1])
    assert np.array_equal(core, core.T)


def test_rasterize_is_linear(rng):
    a, b = rng.random(512), rng.random(512)
    ha, _ = rasterize_values(a, 128)
    hb, _ = rasterize_values(b, 128)
    hab, _ = rasterize_values(2.0 * a - 3.0 * b, 128)
    assert np.allclose(hab, 2.0 * ha - 3.0 * hb, rtol=0, atol=1e-12)
