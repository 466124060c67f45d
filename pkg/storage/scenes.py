"""
Synthetic test scenes: a color checker, a four-quadrant linear polarizer
target, a circular polarizer target and random smooth training patches.
"""

from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import DESK_PATCH_SIZE
from datamodel.errors import ConfigurationError
from datamodel.types import SpectralCube, StokesCube, WavelengthGrid

# Transmission axes of the polarizer target, quadrants in row order: TL, TR, BL, BR
POLAR_TARGET_ANGLES = (0.0, 45.0, 90.0, -45.0)

# (center nm, width nm, base level) of the reflectance bumps on the checker
_CHECKER_PATCHES = (
    (620.0, 60.0, 0.10), (540.0, 50.0, 0.08), (460.0, 45.0, 0.05),
    (580.0, 40.0, 0.20), (500.0, 70.0, 0.12), (680.0, 80.0, 0.05),
    (430.0, 60.0, 0.15), (650.0, 30.0, 0.02), (560.0, 90.0, 0.30),
    (480.0, 35.0, 0.10), (600.0, 120.0, 0.25), (520.0, 25.0, 0.05),
)


def _bump(wavelengths: np.ndarray, center: float, width: float, base: float) -> np.ndarray:
    """Smooth reflectance-like spectrum in (0, 1]."""
    return base + (1.0 - base) * np.exp(-0.5 * ((wavelengths - center) / width) ** 2)


def _check_size(height: int, width: int):
    if height < 2 or width < 2:
        raise ConfigurationError(f"Scene must be at least 2 x 2, got {height} x {width}")


def color_checker(height: int = 64, width: int = 96, grid: WavelengthGrid = None,
                  rows: int = 3, cols: int = 4) -> SpectralCube:
    """Grid of flat patches, each with its own smooth spectrum."""
    _check_size(height, width)
    grid = grid or WavelengthGrid()
    wl = grid.wavelengths
    data = np.zeros((height, width, grid.count))

    row_edges = np.linspace(0, height, rows + 1).astype(int)
    col_edges = np.linspace(0, width, cols + 1).astype(int)
    for r in range(rows):
        for c in range(cols):
            center, spread, base = _CHECKER_PATCHES[(r * cols + c) % len(_CHECKER_PATCHES)]
            data[row_edges[r]:row_edges[r + 1], col_edges[c]:col_edges[c + 1], :] = _bump(wl, center, spread, base)
    return SpectralCube(data, grid)


def unpolarized(cube: SpectralCube) -> StokesCube:
    zeros = np.zeros(cube.shape)
    return StokesCube(cube.data, zeros, zeros, zeros, cube.grid)


def quadrant_masks(height: int, width: int, margin: int = 0) -> List[np.ndarray]:
    """
    Boolean masks of the four quadrants in target order (top-left, top-right,
    bottom-left, bottom-right), each shrunk by `margin` pixels on every side.
    """
    h2, w2 = height // 2, width // 2
    bounds = ((0, h2, 0, w2), (0, h2, w2, width), (h2, height, 0, w2), (h2, height, w2, width))
    masks = []
    for r0, r1, c0, c1 in bounds:
        mask = np.zeros((height, width), dtype=bool)
        mask[r0 + margin:r1 - margin, c0 + margin:c1 - margin] = True
        masks.append(mask)
    return masks


def polar_target(height: int = 64, width: int = 64, grid: WavelengthGrid = None,
                 angles_deg: Sequence[float] = POLAR_TARGET_ANGLES, dolp: float = 1.0,
                 spectrum: Tuple[float, float, float] = (560.0, 120.0, 0.3)) -> StokesCube:
    """
    Four quadrants of linearly polarized light, one transmission axis each.

    S1 = S0 DoLP cos(2 theta), S2 = S0 DoLP sin(2 theta), S3 = 0.
    """
    _check_size(height, width)
    if len(angles_deg) != 4:
        raise ConfigurationError(f"Polar target needs 4 angles, got {len(angles_deg)}")
    if not 0.0 <= dolp <= 1.0:
        raise ConfigurationError(f"DoLP must lie in [0, 1], got {dolp}")
    grid = grid or WavelengthGrid()

    s0 = np.broadcast_to(_bump(grid.wavelengths, *spectrum), (height, width, grid.count)).copy()
    theta = np.zeros((height, width))
    for mask, angle in zip(quadrant_masks(height, width), angles_deg):
        theta[mask] = np.deg2rad(angle)

    s1 = s0 * dolp * np.cos(2.0 * theta)[:, :, None]
    s2 = s0 * dolp * np.sin(2.0 * theta)[:, :, None]
    return StokesCube(s0, s1, s2, np.zeros_like(s0), grid)


def half_masks(height: int, width: int, margin: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """(left, right) halves shrunk by `margin` pixels."""
    w2 = width // 2
    left = np.zeros((height, width), dtype=bool)
    right = np.zeros((height, width), dtype=bool)
    left[margin:height - margin, margin:w2 - margin] = True
    right[margin:height - margin, w2 + margin:width - margin] = True
    return left, right


def circular_target(height: int = 64, width: int = 64, grid: WavelengthGrid = None,
                    spectrum: Tuple[float, float, float] = (560.0, 120.0, 0.3)) -> StokesCube:
    """Right-circular light (S3 = +S0) on the left half, left-circular on the right."""
    _check_size(height, width)
    grid = grid or WavelengthGrid()
    s0 = np.broadcast_to(_bump(grid.wavelengths, *spectrum), (height, width, grid.count)).copy()
    left, right = half_masks(height, width)
    sign = np.where(left, 1.0, -1.0)
    zeros = np.zeros_like(s0)
    return StokesCube(s0, zeros, zeros, s0 * sign[:, :, None], grid)


def training_patches(count: int = 2, size: int = DESK_PATCH_SIZE, grid: WavelengthGrid = None,
                     seed: int = 0) -> List[SpectralCube]:
    """
    Random patches: spatially smooth mixtures of two random spectra.

    Deterministic for a given seed.
    """
    if count < 1:
        raise ConfigurationError(f"Need at least one training patch, got {count}")
    _check_size(size, size)
    grid = grid or WavelengthGrid.desk()
    wl = grid.wavelengths
    rng = np.random.default_rng(seed)

    patches = []
    for _ in range(count):
        spectra = np.stack([
            _bump(wl, rng.uniform(420.0, 680.0), rng.uniform(30.0, 120.0), rng.uniform(0.0, 0.3))
            for _ in range(2)
        ])
        mix = gaussian_filter(rng.random((size, size)), sigma=size / 8.0, mode="wrap")
        mix = (mix - mix.min()) / max(mix.max() - mix.min(), 1e-12)
        data = mix[:, :, None] * spectra[0] + (1.0 - mix)[:, :, None] * spectra[1]
        patches.append(SpectralCube(data, grid))
    return patches


SCENE_KINDS: Dict[str, str] = {
    "checker": "color checker (SpectralCube, or unpolarized StokesCube with --stokes)",
    "polar-target": "four-quadrant linear polarizer target (StokesCube)",
    "circular": "right/left circular halves (StokesCube)",
}


if __name__ == "__main__":
    target = polar_target(32, 32, WavelengthGrid.desk())
    aolp = 0.5 * np.arctan2(target.s2[:, :, 0], target.s1[:, :, 0])
    for name, mask in zip(("TL", "TR", "BL", "BR"), quadrant_masks(32, 32)):
        print(f"{name}: AoLP {np.degrees(aolp[mask].mean()):+.1f} deg")
