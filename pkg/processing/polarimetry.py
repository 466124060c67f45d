"""
Analyzer forward model, Stokes inversion from four analyzer cubes and
degree / angle of linear polarization maps.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import STOKES_TOLERANCE
from datamodel.errors import ConfigurationError, ShapeError
from datamodel.types import (
    ANALYZER_SEQUENCE, AnalyzerConfig, SpectralCube, StokesCube, require_same_grid,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PolarizedScene:
    """Ground-truth Stokes cube of a scene."""

    stokes: StokesCube

    def __post_init__(self):
        violations = self.stokes.violation_count(STOKES_TOLERANCE)
        if violations:
            logger.warning(f"Scene has {violations} non-physical Stokes voxel(s)")

    @property
    def grid(self):
        return self.stokes.grid


@dataclass(frozen=True, eq=False)
class PolarimetricMaps:
    dolp: np.ndarray
    aolp: np.ndarray
    band: int


def analyzer_intensity(scene: PolarizedScene, config: AnalyzerConfig) -> SpectralCube:
    """Intensity cube behind one analyzer, chosen so the Stokes inversion is exact."""
    s = scene.stokes
    config = AnalyzerConfig(config)
    if config is AnalyzerConfig.LINEAR_0:
        data = (s.s0 + s.s1) / 2
    elif config is AnalyzerConfig.LINEAR_90:
        data = (s.s0 - s.s1) / 2
    elif config is AnalyzerConfig.LINEAR_45:
        data = (s.s0 + s.s2) / 2
    else:
        # QWP fast axis at 0 deg, then a 45 deg polarizer; right-circular light (S3 > 0) is blocked
        data = (s.s0 - s.s3) / 2
    return SpectralCube(data, s.grid)


def analyzer_all(scene: PolarizedScene) -> Tuple[SpectralCube, ...]:
    """The four analyzer cubes P1..P4 in protocol order."""
    return tuple(analyzer_intensity(scene, cfg) for cfg in ANALYZER_SEQUENCE)


def stokes_from_measurements(p1: SpectralCube, p2: SpectralCube,
                             p3: SpectralCube, p4: SpectralCube) -> StokesCube:
    """
    S0 = P1 + P2, S1 = P1 - P2, S2 = 2 P3 - S0, S3 = S0 - 2 P4.

    No clamping here; see clamp_physical.
    """
    cubes = (p1, p2, p3, p4)
    shapes = {c.shape for c in cubes}
    if len(shapes) != 1:
        raise ShapeError(f"Analyzer cubes disagree in shape: {sorted(shapes)}")
    require_same_grid(*(c.grid for c in cubes))

    s0 = p1.data + p2.data
    s1 = p1.data - p2.data
    s2 = 2.0 * p3.data - s0
    s3 = s0 - 2.0 * p4.data
    stokes = StokesCube(s0, s1, s2, s3, p1.grid)

    violations = stokes.violation_count()
    if violations:
        logger.info(f"Recovered Stokes cube has {violations} non-physical voxel(s)")
    return stokes


def clamp_physical(stokes: StokesCube) -> StokesCube:
    """Project every Stokes vector onto the cone |(S1, S2, S3)| <= S0."""
    s0 = stokes.s0
    vec = np.stack([stokes.s1, stokes.s2, stokes.s3])
    norm = np.sqrt((vec ** 2).sum(axis=0))

    inside = norm <= s0
    dark = norm <= -s0
    alpha = np.where(inside | dark, 0.0, (s0 + norm) / 2.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        direction = np.where(norm > 0, vec / norm, 0.0)

    new_s0 = np.where(inside, s0, alpha)
    new_vec = np.where(inside, vec, alpha * direction)
    return StokesCube(new_s0, new_vec[0], new_vec[1], new_vec[2], stokes.grid)


def _check_band(stokes: StokesCube, band: int):
    if not 0 <= band < stokes.grid.count:
        raise ConfigurationError(f"Band {band} out of range 0..{stokes.grid.count - 1}")


def _reduce_aolp(aolp: np.ndarray) -> np.ndarray:
    """Map angles into (-pi/2, pi/2]."""
    return np.where(aolp <= -np.pi / 2, aolp + np.pi, aolp)


def dolp_aolp(stokes: StokesCube, band: int) -> PolarimetricMaps:
    """
    DoLP = sqrt(S1^2 + S2^2) / S0 and AoLP = atan2(S2, S1) / 2.

    Dark pixels (S0 = 0) get DoLP = 0 and AoLP = 0. DoLP is clipped to [0, 1].
    """
    _check_band(stokes, band)
    s0 = stokes.s0[:, :, band]
    s1 = stokes.s1[:, :, band]
    s2 = stokes.s2[:, :, band]

    linear = np.hypot(s1, s2)
    dark = s0 <= 0
    with np.errstate(invalid="ignore", divide="ignore"):
        dolp = np.where(dark, 0.0, linear / np.where(dark, 1.0, s0))
    dolp = np.clip(dolp, 0.0, 1.0)

    aolp = _reduce_aolp(0.5 * np.arctan2(s2, s1))
    aolp = np.where(dark | (linear == 0), 0.0, aolp)
    return PolarimetricMaps(dolp, aolp, band)


def dop(stokes: StokesCube, band: int) -> np.ndarray:
    """Degree of polarization sqrt(S1^2 + S2^2 + S3^2) / S0, 0 on dark pixels."""
    _check_band(stokes, band)
    s0 = stokes.s0[:, :, band]
    total = np.sqrt(stokes.s1[:, :, band] ** 2 + stokes.s2[:, :, band] ** 2 + stokes.s3[:, :, band] ** 2)
    dark = s0 <= 0
    return np.where(dark, 0.0, total / np.where(dark, 1.0, s0))


def mean_aolp(stokes: StokesCube, band: int, mask: Optional[np.ndarray] = None) -> float:
    """Axial mean AoLP of a region: half the angle of the region-averaged (S1, S2)."""
    _check_band(stokes, band)
    s1 = stokes.s1[:, :, band]
    s2 = stokes.s2[:, :, band]
    if mask is not None:
        s1, s2 = s1[mask], s2[mask]
    angle = 0.5 * np.arctan2(np.mean(s2), np.mean(s1))
    return float(_reduce_aolp(np.asarray(angle)))


if __name__ == "__main__":
    from datamodel.types import WavelengthGrid

    grid = WavelengthGrid.single(550.0)
    ones = np.ones((1, 1, 1))
    horizontal = PolarizedScene(StokesCube(ones, ones, 0 * ones, 0 * ones, grid))
    for cfg, cube in zip(ANALYZER_SEQUENCE, analyzer_all(horizontal)):
        print(f"{cfg.value:>15}: {cube.data.ravel()[0]:.3f}")

    s = StokesCube(ones, ones * np.sqrt(0.5), ones * np.sqrt(0.5), 0 * ones, grid)
    maps = dolp_aolp(s, 0)
    print(f"DoLP {maps.dolp[0, 0]:.3f}, AoLP {maps.aolp[0, 0] / np.pi:.4f} pi")
