"""
Core value types: wavelength grid, spectral and Stokes cubes, RGB images,
sensor response tables and the four analyzer configurations.

All array-carrying types copy their input and mark it read-only, so instances
can be shared across workers.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Tuple

import numpy as np

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import (
    LAMBDA_MIN, LAMBDA_MAX, LAMBDA_STEP,
    DESK_LAMBDA_MAX, DESK_LAMBDA_STEP,
    RESPONSE_CENTERS_NM, RESPONSE_FWHM_NM, T_POLARIZER,
    STOKES_TOLERANCE,
)
from datamodel.errors import ConfigurationError, ShapeError


def _frozen(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class WavelengthGrid:
    """Uniform wavelength sampling in nm, inclusive of both ends."""

    lambda_min: float = LAMBDA_MIN
    lambda_max: float = LAMBDA_MAX
    step: float = LAMBDA_STEP

    def __post_init__(self):
        if self.step <= 0:
            raise ConfigurationError(f"Wavelength step must be positive, got {self.step}")
        if self.lambda_max < self.lambda_min:
            raise ConfigurationError(
                f"lambda_max ({self.lambda_max}) is below lambda_min ({self.lambda_min})"
            )
        span = (self.lambda_max - self.lambda_min) / self.step
        if abs(span - round(span)) > 1e-9:
            raise ConfigurationError(
                f"Range {self.lambda_min}-{self.lambda_max} nm is not a multiple of {self.step} nm"
            )

    @property
    def count(self) -> int:
        return int(round((self.lambda_max - self.lambda_min) / self.step)) + 1

    @property
    def wavelengths(self) -> np.ndarray:
        """Band centers in nm."""
        return self.lambda_min + self.step * np.arange(self.count)

    @property
    def wavelengths_m(self) -> np.ndarray:
        return self.wavelengths * 1e-9

    def index_of(self, wavelength_nm: float) -> int:
        """Index of the band nearest to a wavelength."""
        return int(np.argmin(np.abs(self.wavelengths - wavelength_nm)))

    def to_dict(self) -> dict:
        return {"lambda_min": self.lambda_min, "lambda_max": self.lambda_max, "step": self.step}

    @classmethod
    def desk(cls) -> "WavelengthGrid":
        """Reduced 8-band grid used by the optimizer's inner loop."""
        return cls(LAMBDA_MIN, DESK_LAMBDA_MAX, DESK_LAMBDA_STEP)

    @classmethod
    def single(cls, wavelength_nm: float) -> "WavelengthGrid":
        return cls(wavelength_nm, wavelength_nm, 1.0)

    @classmethod
    def from_wavelengths(cls, wavelengths) -> "WavelengthGrid":
        """Rebuild a grid from an explicit list of band centers."""
        wl = np.asarray(wavelengths, dtype=np.float64)
        if wl.size == 0:
            raise ConfigurationError("Empty wavelength list")
        if wl.size == 1:
            return cls.single(float(wl[0]))
        steps = np.diff(wl)
        if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=0, atol=1e-6):
            raise ConfigurationError("Wavelengths must be strictly increasing and uniformly spaced")
        return cls(float(wl[0]), float(wl[-1]), float(steps[0]))


@dataclass(frozen=True, eq=False)
class SpectralCube:
    """H x W x bands nonnegative intensities, band order = grid order."""

    data: np.ndarray
    grid: WavelengthGrid = field(default_factory=WavelengthGrid)

    def __post_init__(self):
        arr = _frozen(self.data, 3, "SpectralCube data")
        if arr.shape[2] != self.grid.count:
            raise ShapeError(
                f"Cube has {arr.shape[2]} bands but grid has {self.grid.count}"
            )
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape

    def band(self, index: int) -> np.ndarray:
        return self.data[:, :, index]

    def scaled(self, factor: float) -> "SpectralCube":
        return SpectralCube(self.data * factor, self.grid)

    @classmethod
    def zeros(cls, height: int, width: int, grid: WavelengthGrid = None) -> "SpectralCube":
        grid = grid or WavelengthGrid()
        return cls(np.zeros((height, width, grid.count)), grid)


@dataclass(frozen=True, eq=False)
class RGBImage:
    """H x W x 3 image, channel order R, G, B."""

    data: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.data, 3, "RGBImage data")
        if arr.shape[2] != 3:
            raise ShapeError(f"RGBImage needs 3 channels, got {arr.shape[2]}")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def channel(self, index: int) -> np.ndarray:
        return self.data[:, :, index]


@dataclass(frozen=True, eq=False)
class StokesCube:
    """Per-pixel, per-band Stokes parameters S0..S3 (right-circular has S3 > 0)."""

    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray
    grid: WavelengthGrid = field(default_factory=WavelengthGrid)

    def __post_init__(self):
        shape = None
        for name in ("s0", "s1", "s2", "s3"):
            arr = _frozen(getattr(self, name), 3, f"StokesCube {name}")
            if shape is None:
                shape = arr.shape
            elif arr.shape != shape:
                raise ShapeError(f"StokesCube {name} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, name, arr)
        if shape[2] != self.grid.count:
            raise ShapeError(f"Stokes cube has {shape[2]} bands but grid has {self.grid.count}")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.s0.shape

    @property
    def height(self) -> int:
        return self.s0.shape[0]

    @property
    def width(self) -> int:
        return self.s0.shape[1]

    def stacked(self) -> np.ndarray:
        """Array of shape (4, H, W, bands)."""
        return np.stack([self.s0, self.s1, self.s2, self.s3])

    @classmethod
    def from_stacked(cls, stack: np.ndarray, grid: WavelengthGrid) -> "StokesCube":
        if stack.shape[0] != 4:
            raise ShapeError(f"Expected 4 Stokes components, got {stack.shape[0]}")
        return cls(stack[0], stack[1], stack[2], stack[3], grid)

    def intensity(self) -> SpectralCube:
        return SpectralCube(np.clip(self.s0, 0.0, None), self.grid)

    def physical_mask(self, tol: float = STOKES_TOLERANCE) -> np.ndarray:
        """True where s1^2+s2^2+s3^2 <= s0^2 (1 + tol) and s0 >= 0."""
        polarized = self.s1 ** 2 + self.s2 ** 2 + self.s3 ** 2
        s0_sq = self.s0 ** 2
        return (self.s0 >= 0) & (polarized - s0_sq <= tol * s0_sq)

    def violation_count(self, tol: float = STOKES_TOLERANCE) -> int:
        return int(np.count_nonzero(~self.physical_mask(tol)))


@dataclass(frozen=True, eq=False)
class ResponseTable:
    """Polarizer transmission and RGB camera response sampled on a grid."""

    grid: WavelengthGrid
    t_polarizer: np.ndarray
    r_camera: np.ndarray

    def __post_init__(self):
        t = _frozen(self.t_polarizer, 1, "t_polarizer")
        r = _frozen(self.r_camera, 2, "r_camera")
        if t.shape[0] != self.grid.count or r.shape != (self.grid.count, 3):
            raise ShapeError(
                f"Response shapes {t.shape}, {r.shape} do not match {self.grid.count} bands x 3"
            )
        if np.any(t < 0) or np.any(t > 1) or not np.all(np.isfinite(t)):
            raise ConfigurationError("t_polarizer values must lie in [0, 1]")
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ConfigurationError("r_camera values must be finite and nonnegative")
        object.__setattr__(self, "t_polarizer", t)
        object.__setattr__(self, "r_camera", r)

    @property
    def weights(self) -> np.ndarray:
        """R(lambda, c) = t_polarizer(lambda) * r_camera(lambda, c), shape (bands, 3)."""
        return self.t_polarizer[:, None] * self.r_camera

    @classmethod
    def default(cls, grid: WavelengthGrid = None, t_polarizer: float = T_POLARIZER) -> "ResponseTable":
        """Gaussian R/G/B curves with unit peak."""
        grid = grid or WavelengthGrid()
        wl = grid.wavelengths
        centers = np.asarray(RESPONSE_CENTERS_NM)
        r = np.exp(-4.0 * np.log(2.0) * (wl[:, None] - centers[None, :]) ** 2 / RESPONSE_FWHM_NM ** 2)
        return cls(grid, np.full(grid.count, t_polarizer), r)

    @classmethod
    def unit(cls, grid: WavelengthGrid) -> "ResponseTable":
        return cls(grid, np.ones(grid.count), np.ones((grid.count, 3)))


class AnalyzerConfig(str, Enum):
    """The four analyzer settings of the acquisition protocol."""

    LINEAR_0 = "LINEAR_0"
    LINEAR_90 = "LINEAR_90"
    LINEAR_45 = "LINEAR_45"
    QWP0_LINEAR_45 = "QWP0_LINEAR_45"


# Protocol order M1..M4
ANALYZER_SEQUENCE = (
    AnalyzerConfig.LINEAR_0,
    AnalyzerConfig.LINEAR_90,
    AnalyzerConfig.LINEAR_45,
    AnalyzerConfig.QWP0_LINEAR_45,
)


def require_same_grid(*grids: WavelengthGrid):
    first = grids[0]
    for other in grids[1:]:
        if other != first:
            raise ShapeError(f"Wavelength grid mismatch: {first} vs {other}")
