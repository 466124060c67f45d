"""
Scalar wave-optics PSF engine.

A point source at distance z illuminates the element as a spherical wave, the
element adds the phase k (n_lambda - 1) h(x, y), a lens phase of focal length f
is applied and the PSF is the squared magnitude of the DFT of that field,
centered, cropped and L1-normalized.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy import fft as sfft
from tqdm import tqdm

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import (
    SOURCE_DISTANCE, FOCAL_LENGTH, PSF_CROP, MIN_CROP_ENERGY,
    SELLMEIER_FILE, SELLMEIER_RANGE_NM, THREADS,
)
from datamodel.errors import ConfigurationError, DomainError, NumericalError, ShapeError
from datamodel.types import WavelengthGrid
from optics.doe import HeightMap

logger = logging.getLogger(__name__)


class PhaseConvention(str, Enum):
    # (x^2+y^2)/z spherical term and +(x^2+y^2)/(2f) lens term, as printed
    PAPER_LITERAL = "PAPER_LITERAL"
    # (x^2+y^2)/(2z) spherical term and -(x^2+y^2)/(2f) lens term
    PHYSICAL = "PHYSICAL"


@lru_cache(maxsize=4)
def load_sellmeier(path: str = SELLMEIER_FILE) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    """Read (B, C) Sellmeier coefficients; C in square micrometers."""
    try:
        with open(path) as fh:
            payload = json.load(fh)
        B = tuple(float(b) for b in payload["B"])
        C = tuple(float(c) for c in payload["C"])
    except (OSError, KeyError, ValueError, TypeError) as e:
        raise ConfigurationError(f"Cannot read Sellmeier coefficients from {path}: {e}")
    if len(B) != len(C) or not B:
        raise ConfigurationError(f"Sellmeier file {path} needs matching B and C lists")
    return B, C


def refractive_index(wavelength_nm, coefficients: Optional[tuple] = None):
    """
    Fused-silica refractive index from the three-term Sellmeier equation.

    Args:
        wavelength_nm: Scalar or array of wavelengths in nm, within 300-1000 nm
        coefficients: Optional (B, C) override; defaults to the shipped file

    Returns:
        Index of the same shape as the input
    """
    lam = np.asarray(wavelength_nm, dtype=np.float64)
    lo, hi = SELLMEIER_RANGE_NM
    if np.any(lam < lo) or np.any(lam > hi) or not np.all(np.isfinite(lam)):
        raise DomainError(f"Wavelength {wavelength_nm} nm outside Sellmeier validity range {lo}-{hi} nm")

    B, C = coefficients if coefficients is not None else load_sellmeier()
    l2 = (lam * 1e-3) ** 2
    n_sq = 1.0 + sum(b * l2 / (l2 - c) for b, c in zip(B, C))
    n = np.sqrt(n_sq)
    return float(n) if n.ndim == 0 else n


@dataclass(frozen=True)
class OpticalConfig:
    z: float = SOURCE_DISTANCE
    f: float = FOCAL_LENGTH
    convention: PhaseConvention = PhaseConvention.PAPER_LITERAL
    sellmeier: Optional[tuple] = None

    def __post_init__(self):
        if self.z <= 0 or self.f <= 0:
            raise ConfigurationError(f"z and f must be positive, got z={self.z}, f={self.f}")
        object.__setattr__(self, "convention", PhaseConvention(self.convention))

    def dispersion(self, grid: WavelengthGrid) -> np.ndarray:
        """Per-band refractive index n_lambda."""
        n = np.atleast_1d(refractive_index(grid.wavelengths, self.sellmeier))
        if np.any(n <= 1):
            raise ConfigurationError("Refractive index must exceed 1 on every band")
        return n

    @property
    def spherical_coefficient(self) -> float:
        if self.convention is PhaseConvention.PAPER_LITERAL:
            return 1.0 / self.z
        return 1.0 / (2.0 * self.z)

    @property
    def lens_coefficient(self) -> float:
        if self.convention is PhaseConvention.PAPER_LITERAL:
            return 1.0 / (2.0 * self.f)
        return -1.0 / (2.0 * self.f)

    def to_dict(self) -> dict:
        return {"z": self.z, "f": self.f, "convention": self.convention.value}


@dataclass(frozen=True, eq=False)
class ComplexField:
    values: np.ndarray
    pixel_pitch: float


@dataclass(frozen=True, eq=False)
class PsfStack:
    """Per-band k x k kernels, nonnegative, each summing to 1, center at (k/2, k/2)."""

    grid: WavelengthGrid
    kernels: np.ndarray
    energy_fraction: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        kernels = np.array(self.kernels, dtype=np.float64, copy=True)
        if kernels.ndim != 3 or kernels.shape[1] != kernels.shape[2]:
            raise ShapeError(f"Kernels must be (bands, k, k), got {kernels.shape}")
        if kernels.shape[0] != self.grid.count:
            raise ShapeError(f"{kernels.shape[0]} kernels for a {self.grid.count}-band grid")
        if kernels.shape[1] % 2:
            raise ConfigurationError(f"Kernel size must be even, got {kernels.shape[1]}")
        if np.any(kernels < 0) or not np.all(np.isfinite(kernels)):
            raise ConfigurationError("Kernels must be finite and nonnegative")
        sums = kernels.sum(axis=(1, 2))
        if np.any(sums <= 0):
            raise ConfigurationError(f"Empty kernel at band {int(np.argmin(sums))}")
        kernels /= sums[:, None, None]
        kernels.setflags(write=False)
        object.__setattr__(self, "kernels", kernels)
        if self.energy_fraction is not None:
            object.__setattr__(self, "energy_fraction", np.asarray(self.energy_fraction, dtype=np.float64))

    @property
    def k(self) -> int:
        return self.kernels.shape[1]

    @property
    def center(self) -> int:
        return self.k // 2

    @classmethod
    def delta(cls, grid: WavelengthGrid, k: int = 2) -> "PsfStack":
        """Identity kernels: a single 1 at the center pixel."""
        kernels = np.zeros((grid.count, k, k))
        kernels[:, k // 2, k // 2] = 1.0
        return cls(grid, kernels)

    @classmethod
    def gaussian(cls, grid: WavelengthGrid, k: int, sigmas) -> "PsfStack":
        """Centered Gaussian kernels, one width per band (scalar broadcasts)."""
        sigmas = np.broadcast_to(np.asarray(sigmas, dtype=np.float64), (grid.count,))
        offsets = np.arange(k) - k // 2
        r_sq = offsets[:, None] ** 2 + offsets[None, :] ** 2
        kernels = np.exp(-r_sq[None] / (2.0 * sigmas[:, None, None] ** 2))
        return cls(grid, kernels)

    def to_padded(self, band: int, shape: Tuple[int, int]) -> np.ndarray:
        return pad_kernel(self.kernels[band], shape)


def pad_kernel(kernel: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """
    Place a k x k kernel on an image-sized periodic grid with its center
    (k/2, k/2) at the origin. Kernels larger than the grid wrap around.
    """
    k = kernel.shape[0]
    rows = (np.arange(k) - k // 2) % shape[0]
    cols = (np.arange(k) - k // 2) % shape[1]
    padded = np.zeros(shape, dtype=np.float64)
    np.add.at(padded, (rows[:, None], cols[None, :]), kernel)
    return padded


def unpad_kernel(padded: np.ndarray, k: int) -> np.ndarray:
    """Adjoint of pad_kernel: gather the k x k window around the origin."""
    rows = (np.arange(k) - k // 2) % padded.shape[0]
    cols = (np.arange(k) - k // 2) % padded.shape[1]
    return padded[rows[:, None], cols[None, :]]


@lru_cache(maxsize=8)
def radius_squared(n: int, pitch: float) -> np.ndarray:
    """x^2 + y^2 in square meters, origin at pixel (n/2, n/2)."""
    coords = (np.arange(n) - n // 2) * pitch
    r_sq = coords[:, None] ** 2 + coords[None, :] ** 2
    r_sq.setflags(write=False)
    return r_sq


def field_at_element(config: OpticalConfig, height_map: HeightMap, wavelength_nm: float,
                     n_lambda: Optional[float] = None) -> ComplexField:
    """Spherical wave from the point source after the element's phase delay."""
    if n_lambda is None:
        n_lambda = refractive_index(wavelength_nm, config.sellmeier)
    k = 2.0 * np.pi / (wavelength_nm * 1e-9)
    r_sq = radius_squared(height_map.n, height_map.pixel_pitch)
    phase = k * (config.spherical_coefficient * r_sq + (n_lambda - 1.0) * height_map.h)
    values = np.where(height_map.aperture_mask, np.exp(1j * phase), 0.0)
    return ComplexField(values, height_map.pixel_pitch)


def field_at_sensor(config: OpticalConfig, element_field: ComplexField, wavelength_nm: float) -> ComplexField:
    """Add the lens propagation phase k * lens_coefficient * (x^2 + y^2)."""
    n = element_field.values.shape[0]
    k = 2.0 * np.pi / (wavelength_nm * 1e-9)
    r_sq = radius_squared(n, element_field.pixel_pitch)
    lens = np.exp(1j * k * config.lens_coefficient * r_sq)
    return ComplexField(element_field.values * lens, element_field.pixel_pitch)


def crop_window(n: int, crop: int) -> slice:
    start = n // 2 - crop // 2
    return slice(start, start + crop)


def sensor_spectrum(config: OpticalConfig, height_map: HeightMap, wavelength_nm: float,
                    n_lambda: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """(U3, F{U3}) for one wavelength; F is the unshifted 2-D DFT."""
    u1 = field_at_element(config, height_map, wavelength_nm, n_lambda)
    u3 = field_at_sensor(config, u1, wavelength_nm)
    return u3.values, sfft.fft2(u3.values)


def band_psf(config: OpticalConfig, height_map: HeightMap, wavelength_nm: float,
             crop: int, n_lambda: Optional[float] = None) -> Tuple[np.ndarray, float]:
    """
    PSF of one band.

    Returns:
        (kernel normalized to unit L1, fraction of the DFT-plane energy inside the crop)
    """
    _, spectrum = sensor_spectrum(config, height_map, wavelength_nm, n_lambda)
    intensity = np.abs(spectrum) ** 2
    total = intensity.sum()
    if not np.isfinite(total) or total <= 0:
        raise NumericalError(f"Zero or non-finite PSF energy at {wavelength_nm} nm",
                             {"wavelength_nm": wavelength_nm, "total": float(total)})
    window = crop_window(height_map.n, crop)
    kernel = sfft.fftshift(intensity)[window, window]
    kept = kernel.sum()
    if kept <= 0:
        raise NumericalError(f"PSF crop holds no energy at {wavelength_nm} nm",
                             {"wavelength_nm": wavelength_nm, "crop": crop})
    return kernel / kept, float(kept / total)


def psf(config: OpticalConfig, height_map: HeightMap, grid: WavelengthGrid = None,
        crop: int = PSF_CROP, widen: bool = False, max_workers: int = THREADS) -> PsfStack:
    """
    Compute the per-band PSF stack of a height map.

    Args:
        config: Source distance, focal length, dispersion and phase convention
        height_map: Element heights on an n x n grid
        grid: Wavelength bands
        crop: Even kernel size k <= n
        widen: Double the crop until every band keeps MIN_CROP_ENERGY of its energy
        max_workers: Bands evaluated concurrently

    Returns:
        PsfStack with energy_fraction filled in
    """
    grid = grid or WavelengthGrid()
    n = height_map.n
    if crop > n:
        raise ConfigurationError(f"Crop {crop} exceeds grid size {n}")
    if crop <= 0 or crop % 2:
        raise ConfigurationError(f"Crop must be a positive even number, got {crop}")

    indices = config.dispersion(grid)
    wavelengths = grid.wavelengths

    def one_band(b: int):
        return band_psf(config, height_map, wavelengths[b], crop, indices[b])

    progress = dict(total=grid.count, desc="PSF bands", disable=not logger.isEnabledFor(logging.INFO))
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(tqdm(pool.map(one_band, range(grid.count)), **progress))
    else:
        results = [one_band(b) for b in tqdm(range(grid.count), **progress)]

    kernels = np.stack([kernel for kernel, _ in results])
    energy = np.array([fraction for _, fraction in results])

    low = energy < MIN_CROP_ENERGY
    if np.any(low):
        if widen and crop < n:
            wider = min(2 * crop, n)
            logger.info(f"Crop {crop} keeps {energy.min():.3f} of the energy, widening to {wider}")
            return psf(config, height_map, grid, wider, widen=True, max_workers=max_workers)
        logger.warning(
            f"Crop {crop} keeps less than {MIN_CROP_ENERGY:.0%} of the energy on "
            f"{int(low.sum())} band(s) (min {energy.min():.3f})"
        )

    metadata = {"optical": config.to_dict(), "grid_size": n, "pixel_pitch": height_map.pixel_pitch}
    return PsfStack(grid, kernels, energy, metadata)


if __name__ == "__main__":
    from optics.doe import HeightProfile, rasterize

    logging.basicConfig(level=logging.INFO)
    print(f"n(400 nm) = {refractive_index(400.0):.5f}, n(700 nm) = {refractive_index(700.0):.5f}")

    hmap = rasterize(HeightProfile.random(seed=0, length=64), n=128)
    stack = psf(OpticalConfig(), hmap, WavelengthGrid.desk(), crop=32)
    print(f"Kernels: {stack.kernels.shape}, energy in crop: {np.round(stack.energy_fraction, 3)}")
