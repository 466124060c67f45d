"""
Rotationally symmetric diffractive element: radial profile -> height map,
quantization to etch levels and per-level fabrication error.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import (
    GRID_SIZE, PIXEL_PITCH, PROFILE_LENGTH, DEPTH_MAX,
    QUANTIZATION_LEVELS, STEP_ERROR,
)
from datamodel.errors import ConfigurationError, ShapeError


@dataclass(frozen=True, eq=False)
class HeightProfile:
    """Radial heights w_i in meters, ring i at radius i (profile-index units)."""

    w: np.ndarray
    depth_max: float = DEPTH_MAX

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64, copy=True)
        if w.ndim != 1 or w.size == 0:
            raise ShapeError(f"Profile must be a non-empty vector, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ConfigurationError("Profile contains non-finite heights")
        if np.any(w < 0) or np.any(w > self.depth_max):
            raise ConfigurationError(
                f"Profile heights must lie in [0, {self.depth_max}] m, "
                f"got [{w.min()}, {w.max()}]"
            )
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def length(self) -> int:
        return self.w.size

    @classmethod
    def constant(cls, height: float, length: int = PROFILE_LENGTH,
                 depth_max: float = DEPTH_MAX) -> "HeightProfile":
        return cls(np.full(length, height), depth_max)

    @classmethod
    def random(cls, seed: int, length: int = PROFILE_LENGTH,
               depth_max: float = DEPTH_MAX) -> "HeightProfile":
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(0.0, depth_max, size=length), depth_max)


@dataclass(frozen=True, eq=False)
class HeightMap:
    h: np.ndarray
    pixel_pitch: float
    aperture_mask: np.ndarray
    depth: float = DEPTH_MAX
    levels: Optional[int] = None   # Set once quantized

    def __post_init__(self):
        h = np.array(self.h, dtype=np.float64, copy=True)
        mask = np.array(self.aperture_mask, dtype=bool, copy=True)
        if h.ndim != 2 or h.shape[0] != h.shape[1] or mask.shape != h.shape:
            raise ShapeError(f"Height map must be square and match its mask, got {h.shape}, {mask.shape}")
        if self.pixel_pitch <= 0:
            raise ConfigurationError(f"Pixel pitch must be positive, got {self.pixel_pitch}")
        h.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "aperture_mask", mask)

    @property
    def n(self) -> int:
        return self.h.shape[0]


@lru_cache(maxsize=16)
def ring_indices(n: int, length: int = PROFILE_LENGTH) -> np.ndarray:
    """
    Profile index of every pixel of an n x n grid, -1 outside the aperture.

    The center sits at pixel (n/2, n/2). Pixel radius is converted to
    profile-index units with scale length / (n/2), which is exactly 1 for the
    1024 x 1024 / 512-entry geometry. A pixel belongs to ring round(r)
    (half away from zero) when r <= length; ring `length` exists only on the
    exact rim and is folded onto the last profile entry.
    """
    if n <= 0 or n % 2:
        raise ConfigurationError(f"Grid size must be a positive even number, got {n}")
    offsets = np.arange(n, dtype=np.int64) - n // 2
    r_sq = offsets[:, None] ** 2 + offsets[None, :] ** 2
    r = np.sqrt(r_sq.astype(np.float64)) * (length / (n / 2))

    idx = np.floor(r + 0.5).astype(np.int64)
    idx = np.minimum(idx, length - 1)
    idx[r > length] = -1
    idx.setflags(write=False)
    return idx


def rasterize_values(w: np.ndarray, n: int = GRID_SIZE):
    """(heights, aperture mask) for a raw profile vector; no bound checks."""
    w = np.asarray(w, dtype=np.float64)
    idx = ring_indices(n, w.size)
    mask = idx >= 0
    return np.where(mask, w[np.maximum(idx, 0)], 0.0), mask


def rasterize(profile: HeightProfile, n: int = GRID_SIZE, pitch: float = PIXEL_PITCH) -> HeightMap:
    """Rotate the radial profile into an n x n height map (linear in the profile)."""
    h, mask = rasterize_values(profile.w, n)
    return HeightMap(h, pitch, mask, depth=profile.depth_max)


def rasterize_adjoint(grad_map: np.ndarray, length: int = PROFILE_LENGTH) -> np.ndarray:
    """Adjoint of rasterize: sum a per-pixel quantity over each ring."""
    grad_map = np.asarray(grad_map, dtype=np.float64)
    if grad_map.ndim != 2 or grad_map.shape[0] != grad_map.shape[1]:
        raise ShapeError(f"Expected a square map, got {grad_map.shape}")
    idx = ring_indices(grad_map.shape[0], length)
    inside = idx >= 0
    return np.bincount(idx[inside], weights=grad_map[inside], minlength=length)


def reachable_rings(n: int, length: int = PROFILE_LENGTH) -> np.ndarray:
    """Profile indices that at least one pixel samples."""
    idx = ring_indices(n, length)
    return np.unique(idx[idx >= 0])


def _snap(values: np.ndarray, levels: int, depth: float) -> np.ndarray:
    if levels < 2:
        raise ConfigurationError(f"Need at least 2 quantization levels, got {levels}")
    if depth <= 0:
        raise ConfigurationError(f"Quantization depth must be positive, got {depth}")
    step = depth / (levels - 1)
    return np.clip(np.round(values / step), 0, levels - 1) * step


def quantize(height_map: HeightMap, levels: int = QUANTIZATION_LEVELS,
             depth: float = DEPTH_MAX) -> HeightMap:
    """Snap every height to the nearest of k * depth / (levels - 1)."""
    h = _snap(height_map.h, levels, depth)
    return HeightMap(h, height_map.pixel_pitch, height_map.aperture_mask, depth=depth, levels=levels)


def quantize_profile(profile: HeightProfile, levels: int = QUANTIZATION_LEVELS,
                     depth: float = None) -> HeightProfile:
    """Same snapping applied to the radial profile (rasterize commutes with it)."""
    depth = profile.depth_max if depth is None else depth
    return HeightProfile(np.minimum(_snap(profile.w, levels, depth), profile.depth_max),
                         profile.depth_max)


def perturb_fabrication(height_map: HeightMap, step_error: float = STEP_ERROR,
                        seed: int = 0) -> HeightMap:
    """
    Add one uniform error in [-step_error, +step_error] per etch level.

    Every aperture pixel on the same level moves by the same amount; pixels
    outside the aperture stay at zero.
    """
    if step_error < 0:
        raise ConfigurationError(f"step_error must be >= 0, got {step_error}")
    if height_map.levels is None:
        raise ConfigurationError("perturb_fabrication expects a quantized height map")

    levels = height_map.levels
    step = height_map.depth / (levels - 1)
    level_index = np.clip(np.round(height_map.h / step), 0, levels - 1).astype(np.int64)

    rng = np.random.default_rng(seed)
    offsets = rng.uniform(-step_error, step_error, size=levels)

    delta = np.where(height_map.aperture_mask, offsets[level_index], 0.0)
    return HeightMap(height_map.h + delta, height_map.pixel_pitch, height_map.aperture_mask,
                     depth=height_map.depth, levels=levels)


if __name__ == "__main__":
    profile = HeightProfile.random(seed=0)
    hmap = quantize(rasterize(profile))
    print(f"Height map {hmap.n}x{hmap.n}, aperture pixels: {hmap.aperture_mask.sum()}")
    print(f"Distinct levels: {np.unique(hmap.h).size}")
    noisy = perturb_fabrication(hmap, seed=1)
    print(f"Max fabrication shift: {np.abs(noisy.h - hmap.h).max() * 1e9:.1f} nm")
