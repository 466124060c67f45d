"""
Diffractive encoder: every band is convolved with its PSF, weighted by the
polarizer/camera response, summed into R, G, B and corrupted by sensor noise.
Also synthesizes the four-exposure analyzer acquisition.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy.signal import fftconvolve

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import NOISE_SIGMA_FRACTION, NOISE_PEAK
from datamodel.errors import ConfigurationError, ShapeError
from datamodel.types import (
    ANALYZER_SEQUENCE, AnalyzerConfig, RGBImage, ResponseTable, SpectralCube,
    require_same_grid,
)
from optics.psf import PsfStack
from processing.polarimetry import PolarizedScene, analyzer_intensity

logger = logging.getLogger(__name__)


class NoiseKind(str, Enum):
    NONE = "NONE"
    GAUSSIAN = "GAUSSIAN"
    POISSON_GAUSSIAN = "POISSON_GAUSSIAN"


@dataclass(frozen=True)
class NoiseModel:
    """
    Sensor noise.

    With relative=True, sigma is a fraction of the clean image's 99th
    percentile; otherwise it is an absolute standard deviation. peak is the
    photon count that maps to intensity 1 for the Poisson part.
    """

    kind: NoiseKind = NoiseKind.GAUSSIAN
    sigma: float = NOISE_SIGMA_FRACTION
    relative: bool = True
    peak: float = NOISE_PEAK
    seed: int = 0
    bit_depth: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.sigma < 0:
            raise ConfigurationError(f"Noise sigma must be >= 0, got {self.sigma}")
        if self.kind is NoiseKind.POISSON_GAUSSIAN and self.peak <= 0:
            raise ConfigurationError(f"Poisson peak must be positive, got {self.peak}")
        if self.bit_depth is not None and self.bit_depth < 1:
            raise ConfigurationError(f"bit_depth must be >= 1, got {self.bit_depth}")

    @classmethod
    def none(cls) -> "NoiseModel":
        return cls(kind=NoiseKind.NONE, sigma=0.0)

    def with_seed(self, seed: int) -> "NoiseModel":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value, "sigma": self.sigma, "relative": self.relative,
            "peak": self.peak, "seed": self.seed, "bit_depth": self.bit_depth,
        }


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Four RGB exposures M1..M4 with their analyzer settings and noise seeds."""

    images: Tuple[RGBImage, ...]
    configs: Tuple[AnalyzerConfig, ...] = ANALYZER_SEQUENCE
    seeds: Tuple[int, ...] = ()
    noise: Optional[NoiseModel] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != 4 or len(self.configs) != 4:
            raise ShapeError(f"A measurement set holds exactly 4 images, got {len(self.images)}")
        if len(set(self.configs)) != 4:
            raise ConfigurationError("Analyzer configurations must be distinct")


def convolve(stack: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """
    Zero-padded linear convolution of each band with its kernel, cropped back
    to H x W so that a kernel's center (k/2, k/2) maps a pixel onto itself.

    Args:
        stack: (H, W, B) images
        kernels: (B, k, k)
    """
    k = kernels.shape[1]
    return _convolve_window(stack, kernels, k // 2)


def convolve_adjoint(stack: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Adjoint of convolve: correlation with the same kernels."""
    k = kernels.shape[1]
    return _convolve_window(stack, kernels[:, ::-1, ::-1], k - 1 - k // 2)


def _convolve_window(stack: np.ndarray, kernels: np.ndarray, offset: int) -> np.ndarray:
    h, w = stack.shape[:2]
    full = fftconvolve(stack, np.moveaxis(kernels, 0, -1), mode="full", axes=(0, 1))
    return full[offset:offset + h, offset:offset + w, :]


class ForwardModel:
    """Noiseless linear encoder y = sum_b R(b, c) (K_b * x_b) and its adjoint."""

    def __init__(self, psfs: PsfStack, response: ResponseTable):
        require_same_grid(psfs.grid, response.grid)
        self.psfs = psfs
        self.kernels = psfs.kernels
        self.weights = response.weights          # (B, 3)

    def forward(self, cube: np.ndarray) -> np.ndarray:
        """(H, W, B) -> (H, W, 3)"""
        return convolve(cube, self.kernels) @ self.weights

    def adjoint(self, rgb: np.ndarray) -> np.ndarray:
        """(H, W, 3) -> (H, W, B)"""
        return convolve_adjoint(rgb @ self.weights.T, self.kernels)


def apply_noise(clean: np.ndarray, noise: NoiseModel) -> np.ndarray:
    """Add sensor noise and optional ADC quantization; noisy outputs are clipped to >= 0."""
    if noise.kind is NoiseKind.NONE and noise.bit_depth is None:
        return clean

    rng = np.random.default_rng(noise.seed)
    noisy = clean
    if noise.kind is not NoiseKind.NONE:
        sigma = noise.sigma
        if noise.relative:
            sigma *= float(np.percentile(clean, 99)) if clean.size else 0.0
        if noise.kind is NoiseKind.POISSON_GAUSSIAN:
            counts = rng.poisson(np.clip(clean, 0.0, None) * noise.peak)
            noisy = counts / noise.peak
        noisy = noisy + rng.normal(0.0, sigma, size=clean.shape)

    noisy = np.clip(noisy, 0.0, None)

    if noise.bit_depth is not None:
        full_scale = float(clean.max())
        if full_scale > 0:
            levels = 2 ** noise.bit_depth - 1
            noisy = np.round(np.clip(noisy / full_scale, 0.0, 1.0) * levels) / levels * full_scale
    return noisy


def encode(cube: SpectralCube, psfs: PsfStack, response: ResponseTable,
           noise: NoiseModel = None) -> RGBImage:
    """
    Simulate one RGB measurement of a spectral cube.

    Args:
        cube: Scene intensities (H x W x bands)
        psfs: One kernel per band
        response: R(lambda, c) = t_polarizer * r_camera
        noise: Sensor noise; None means noiseless

    Returns:
        H x W x 3 measurement
    """
    require_same_grid(cube.grid, psfs.grid, response.grid)
    noise = noise or NoiseModel.none()
    clean = ForwardModel(psfs, response).forward(cube.data)
    return RGBImage(apply_noise(clean, noise))


def derive_seeds(master_seed: int, count: int = 4) -> Tuple[int, ...]:
    """Distinct, reproducible child seeds."""
    children = np.random.SeedSequence(master_seed).spawn(count)
    return tuple(int(child.generate_state(1)[0]) for child in children)


def acquire_four(scene: PolarizedScene, psfs: PsfStack, response: ResponseTable,
                 noise: NoiseModel = None) -> MeasurementSet:
    """
    Encode the scene behind each of the four analyzers with the same PSF stack.
    """
    noise = noise or NoiseModel.none()
    seeds = derive_seeds(noise.seed, len(ANALYZER_SEQUENCE))

    images = []
    for config, seed in zip(ANALYZER_SEQUENCE, seeds):
        intensity = analyzer_intensity(scene, config)
        images.append(encode(intensity, psfs, response, noise.with_seed(seed)))
        logger.debug(f"Encoded {config.value} with seed {seed}")

    return MeasurementSet(tuple(images), ANALYZER_SEQUENCE, seeds, noise)


if __name__ == "__main__":
    from datamodel.types import WavelengthGrid

    grid = WavelengthGrid()
    rng = np.random.default_rng(0)
    cube = SpectralCube(rng.random((32, 32, grid.count)), grid)
    psfs = PsfStack.gaussian(grid, 8, np.linspace(0.8, 2.0, grid.count))
    image = encode(cube, psfs, ResponseTable.default(grid))
    print(f"Measurement {image.data.shape}, mean per channel {image.data.mean(axis=(0, 1))}")
