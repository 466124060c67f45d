"""
Classical reconstruction: per-band Wiener deconvolution of every RGB channel,
response-weighted fusion into a spectral cube and optional projected-gradient
refinement against the noiseless forward model.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy import fft as sfft
from tqdm import tqdm

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import DECONV_EPSILON, REFINE_MAX_BACKTRACKS
from datamodel.errors import ConfigurationError, ShapeError, SingularityError
from datamodel.types import RGBImage, ResponseTable, SpectralCube, StokesCube, WavelengthGrid, require_same_grid
from optics.psf import PsfStack, pad_kernel
from processing.encoder import ForwardModel, MeasurementSet
from processing.polarimetry import stokes_from_measurements

logger = logging.getLogger(__name__)


class FusionMode(str, Enum):
    RESPONSE_WEIGHTED = "RESPONSE_WEIGHTED"
    CHANNEL_MEAN = "CHANNEL_MEAN"


@dataclass(frozen=True)
class DeconvConfig:
    epsilon: float = DECONV_EPSILON
    fusion: FusionMode = FusionMode.RESPONSE_WEIGHTED
    iterations: int = 0
    step: Optional[float] = None   # None: 1 / ||R||_F^2, a bound on 1 / Lipschitz

    def __post_init__(self):
        object.__setattr__(self, "fusion", FusionMode(self.fusion))
        if self.epsilon < 0:
            raise ConfigurationError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.iterations < 0:
            raise ConfigurationError(f"iterations must be >= 0, got {self.iterations}")
        if self.step is not None and self.step <= 0:
            raise ConfigurationError(f"step must be positive, got {self.step}")


def wiener_filter(kernel: np.ndarray, shape: Tuple[int, int], epsilon: float) -> np.ndarray:
    """
    Frequency response conj(F(P)) / (|F(P)|^2 + epsilon * max |F(P)|^2) of a
    kernel centered at the origin of an image-sized grid.
    """
    if not np.any(kernel):
        raise ConfigurationError("Cannot deconvolve with an all-zero kernel")
    spectrum = sfft.fft2(pad_kernel(kernel, shape))
    power = np.abs(spectrum) ** 2
    denominator = power + epsilon * power.max()
    if epsilon == 0 and np.any(denominator == 0):
        row, col = np.argwhere(denominator == 0)[0]
        raise SingularityError(
            f"Kernel spectrum vanishes at frequency bin ({row}, {col}) and epsilon = 0",
            frequency_bin=(int(row), int(col)),
        )
    return np.conj(spectrum) / denominator


def wiener_band(image_channel: np.ndarray, kernel: np.ndarray, epsilon: float = DECONV_EPSILON) -> np.ndarray:
    """
    Wiener-deconvolve one H x W channel with one kernel.

    Returns the real part of F^-1(F(I) conj(F(P)) / (|F(P)|^2 + eps max|F(P)|^2)).
    """
    if epsilon < 0:
        raise ConfigurationError(f"epsilon must be >= 0, got {epsilon}")
    image_channel = np.asarray(image_channel, dtype=np.float64)
    if image_channel.ndim != 2:
        raise ShapeError(f"Expected a 2-D channel, got shape {image_channel.shape}")
    filt = wiener_filter(kernel, image_channel.shape, epsilon)
    result = sfft.ifft2(sfft.fft2(image_channel) * filt)

    scale = np.abs(result).max()
    if scale > 0 and np.abs(result.imag).max() > 1e-9 * scale:
        logger.debug(f"Wiener output carries an imaginary residue of {np.abs(result.imag).max():.3e}")
    return result.real


def deconv_all(measurement: RGBImage, psfs: PsfStack, cfg: DeconvConfig = None) -> np.ndarray:
    """
    Deconvolve every channel with every band's kernel.

    Returns:
        H x W x bands x 3 tensor; cross-band residue is left in place
    """
    cfg = cfg or DeconvConfig()
    shape = (measurement.height, measurement.width)
    spectra = sfft.fft2(measurement.data, axes=(0, 1))       # (H, W, 3)

    out = np.empty(shape + (psfs.grid.count, 3))
    bands = tqdm(range(psfs.grid.count), desc="Deconvolving bands",
                 disable=not logger.isEnabledFor(logging.INFO))
    for b in bands:
        filt = wiener_filter(psfs.kernels[b], shape, cfg.epsilon)
        out[:, :, b, :] = sfft.ifft2(spectra * filt[:, :, None], axes=(0, 1)).real
    return out


def fusion_weights(response: ResponseTable, mode: FusionMode) -> np.ndarray:
    """
    (bands, 3) channel weights.

    RESPONSE_WEIGHTED uses w_c = R(b, c) / sum_c R(b, c), so the weights of
    every band sum to 1.
    """
    mode = FusionMode(mode)
    weights = response.weights
    if mode is FusionMode.CHANNEL_MEAN:
        return np.full(weights.shape, 1.0 / 3.0)
    total = weights.sum(axis=1)
    if np.any(total == 0):
        band = int(np.argmin(total))
        raise ConfigurationError(
            f"All response weights are zero for band {band} ({response.grid.wavelengths[band]:.0f} nm)"
        )
    return weights / total[:, None]



def fuse_linear(tensor: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Unclipped band estimates sum_c w(b, c) * tensor[..., b, c]."""
    return np.einsum("hwbc,bc->hwb", tensor, weights)


def refine(initial: np.ndarray, measurement: RGBImage, model: ForwardModel,
           iterations: int, step: Optional[float] = None) -> Tuple[np.ndarray, List[float]]:
    """
    Projected gradient descent on 0.5 ||A x - y||^2 with x >= 0.

    The first step rescales the initial estimate by the least-squares gain
    along it. Each later step backtracks until the projected sufficient-decrease
    condition holds, so the objective never increases.

    Returns:
        (refined cube data, objective after the initial projection and after each iteration)
    """
    y = measurement.data
    if step is None:
        step = 1.0 / max(float((model.weights ** 2).sum()), 1e-300)

    x = np.clip(initial, 0.0, None)
    ax = model.forward(x)
    denom = float((ax ** 2).sum())
    if denom > 0:
        gain = max(float((ax * y).sum()) / denom, 0.0)
        x, ax = x * gain, ax * gain

    residual = ax - y
    objective = 0.5 * float((residual ** 2).sum())
    history = [objective]

    for it in range(iterations):
        grad = model.adjoint(residual)
        t = step
        for _ in range(REFINE_MAX_BACKTRACKS):
            candidate = np.clip(x - t * grad, 0.0, None)
            diff = candidate - x
            cand_residual = model.forward(candidate) - y
            cand_objective = 0.5 * float((cand_residual ** 2).sum())
            bound = objective + float((grad * diff).sum()) + float((diff ** 2).sum()) / (2 * t)
            if cand_objective <= bound and cand_objective <= objective:
                break
            t *= 0.5
        else:
            logger.warning(f"Refinement backtracking exhausted at iteration {it}, stopping")
            history.append(objective)
            break
        x, residual, objective = candidate, cand_residual, cand_objective
        history.append(objective)

    logger.info(f"Refinement objective {history[0]:.4e} -> {history[-1]:.4e} over {len(history) - 1} step(s)")
    return x, history


def fuse(tensor: np.ndarray, response: ResponseTable, cfg: DeconvConfig = None,
         measurement: Optional[RGBImage] = None, psfs: Optional[PsfStack] = None) -> SpectralCube:
    """
    Combine the per-channel deconvolutions into one spectral cube.

    Refinement (cfg.iterations > 0) needs the measurement and the PSF stack.
    The result is clipped to >= 0.
    """
    cfg = cfg or DeconvConfig()
    if tensor.ndim != 4 or tensor.shape[2] != response.grid.count or tensor.shape[3] != 3:
        raise ShapeError(f"Tensor shape {tensor.shape} does not match {response.grid.count} bands x 3")

    estimate = fuse_linear(tensor, fusion_weights(response, cfg.fusion))

    if cfg.iterations > 0:
        if measurement is None or psfs is None:
            raise ConfigurationError("Refinement needs the measurement and the PSF stack")
        model = ForwardModel(psfs, response)
        estimate, _ = refine(estimate, measurement, model, cfg.iterations, cfg.step)

    return SpectralCube(np.clip(estimate, 0.0, None), response.grid)


def reconstruct(measurement: RGBImage, psfs: PsfStack, response: ResponseTable,
                cfg: DeconvConfig = None) -> SpectralCube:
    """deconv_all followed by fuse."""
    require_same_grid(psfs.grid, response.grid)
    cfg = cfg or DeconvConfig()
    tensor = deconv_all(measurement, psfs, cfg)
    return fuse(tensor, response, cfg, measurement, psfs)


def reconstruct_polarimetric(measurements: MeasurementSet, psfs: PsfStack, response: ResponseTable,
                             cfg: DeconvConfig = None) -> Tuple[StokesCube, Tuple[SpectralCube, ...]]:
    """Reconstruct P1..P4 from M1..M4 and invert them to Stokes parameters."""
    cubes = tuple(reconstruct(image, psfs, response, cfg) for image in measurements.images)
    return stokes_from_measurements(*cubes), cubes


def flat_spectrum_baseline(measurement: RGBImage, grid: WavelengthGrid) -> SpectralCube:
    """Assign the RGB mean of each pixel to every band."""
    mean = measurement.data.mean(axis=2)
    return SpectralCube(np.repeat(mean[:, :, None], grid.count, axis=2), grid)


if __name__ == "__main__":
    from processing.encoder import encode

    grid = WavelengthGrid.desk()
    rng = np.random.default_rng(0)
    truth = SpectralCube(rng.random((48, 48, grid.count)), grid)
    psfs = PsfStack.gaussian(grid, 8, np.linspace(0.6, 1.6, grid.count))
    response = ResponseTable.default(grid)

    measurement = encode(truth, psfs, response)
    cube = reconstruct(measurement, psfs, response, DeconvConfig(iterations=20))
    print(f"Reconstructed {cube.shape}, range [{cube.data.min():.3f}, {cube.data.max():.3f}]")
