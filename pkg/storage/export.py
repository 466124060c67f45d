"""
Image and curve export: synthesized RGB, DoLP / AoLP maps, PSF previews,
spectral-curve and optimizer-trajectory CSV files.

PNG images are scaled linearly so that the image maximum maps to full scale
(255 at 8 bits, 65535 at 16 bits); an all-zero image stays black.
"""

import csv
import logging
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import cv2
import numpy as np
import matplotlib

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from datamodel.errors import ConfigurationError, FormatError
from datamodel.types import RGBImage, ResponseTable, SpectralCube, require_same_grid
from optics.psf import PsfStack
from processing.polarimetry import PolarimetricMaps

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def synthesize_rgb(cube: SpectralCube, response: ResponseTable) -> RGBImage:
    """
    RGB rendering of a spectral cube: channel c = sum over bands of
    cube * r_camera(band, c), divided by the image maximum.
    """
    require_same_grid(cube.grid, response.grid)
    rgb = np.einsum("hwb,bc->hwc", cube.data, response.r_camera)
    peak = rgb.max()
    if peak > 0:
        rgb = rgb / peak
    return RGBImage(rgb)


def to_integer(image: np.ndarray, bit_depth: int = 8) -> np.ndarray:
    """Linear [0, max] -> [0, 2^bits - 1]; negative values clip to 0."""
    if bit_depth not in (8, 16):
        raise ConfigurationError(f"PNG bit depth must be 8 or 16, got {bit_depth}")
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, None)
    peak = image.max() if image.size else 0.0
    full = 2 ** bit_depth - 1
    scaled = image / peak * full if peak > 0 else np.zeros_like(image)
    return np.round(scaled).astype(np.uint8 if bit_depth == 8 else np.uint16)


def _imwrite(values: np.ndarray, path: PathLike) -> Path:
    """8- or 16-bit gray or RGB array to PNG (OpenCV stores channels as BGR)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if values.ndim == 3:
        values = cv2.cvtColor(values, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), values):
        raise FormatError(f"Could not write PNG {path}")
    logger.debug(f"Wrote {path}")
    return path


def read_png(path: PathLike) -> np.ndarray:
    """PNG at its stored bit depth, RGB channel order for color images."""
    values = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if values is None:
        raise FormatError(f"Could not read PNG {path}")
    if values.ndim == 3:
        values = cv2.cvtColor(values, cv2.COLOR_BGR2RGB)
    return values


def write_png(image: np.ndarray, path: PathLike, bit_depth: int = 8) -> Path:
    return _imwrite(to_integer(image, bit_depth), path)


def export_rgb_png(image: Union[RGBImage, SpectralCube], path: PathLike,
                   response: ResponseTable = None, bit_depth: int = 8) -> Path:
    """PNG of an RGB image, or of the synthesized RGB of a spectral cube."""
    if isinstance(image, SpectralCube):
        if response is None:
            response = ResponseTable.default(image.grid)
        image = synthesize_rgb(image, response)
    return write_png(image.data, path, bit_depth)


def export_dolp_png(maps: PolarimetricMaps, path: PathLike, bit_depth: int = 8) -> Path:
    """Grayscale DoLP, 0 -> black, 1 -> white (no per-image rescaling)."""
    full = 2 ** bit_depth - 1
    if bit_depth not in (8, 16):
        raise ConfigurationError(f"PNG bit depth must be 8 or 16, got {bit_depth}")
    values = np.round(np.clip(maps.dolp, 0.0, 1.0) * full).astype(np.uint8 if bit_depth == 8 else np.uint16)
    return _imwrite(values, path)


def aolp_colors(aolp: np.ndarray) -> np.ndarray:
    """AoLP in (-pi/2, pi/2] through the cyclic 'twilight' colormap, as 8-bit RGB."""
    cmap = matplotlib.colormaps["twilight"]
    normalized = (np.asarray(aolp) + np.pi / 2) / np.pi
    return (cmap(np.clip(normalized, 0.0, 1.0))[..., :3] * 255).round().astype(np.uint8)


def export_aolp_png(maps: PolarimetricMaps, path: PathLike) -> Path:
    return _imwrite(aolp_colors(maps.aolp), path)


def export_psf_previews(stack: PsfStack, directory: PathLike) -> List[Path]:
    """One 8-bit PNG per band, each scaled to its own peak."""
    directory = Path(directory)
    return [
        write_png(kernel, directory / f"psf_{wavelength:.0f}nm.png")
        for kernel, wavelength in zip(stack.kernels, stack.grid.wavelengths)
    ]


def write_spectral_curve(path: PathLike, wavelengths: Sequence[float], values: Sequence[float]) -> Path:
    """Two-column CSV (wavelength_nm, value)."""
    wavelengths, values = list(wavelengths), list(values)
    if len(wavelengths) != len(values):
        raise ConfigurationError(f"{len(wavelengths)} wavelengths but {len(values)} values")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["wavelength_nm", "value"])
        for wl, v in zip(wavelengths, values):
            writer.writerow([repr(float(wl)), repr(float(v))])
    return path


def write_trajectory(path: PathLike, rows: Iterable) -> Path:
    """CSV (iteration, objective, step_size, accepted) from optimizer trajectory rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "objective", "step_size", "accepted"])
        for row in rows:
            writer.writerow([row.iteration, repr(float(row.objective)), repr(float(row.step_size)),
                             int(row.accepted)])
    return path


if __name__ == "__main__":
    from datamodel.types import WavelengthGrid

    grid = WavelengthGrid()
    cube = SpectralCube(np.zeros((4, 4, grid.count)), grid)
    green = cube.data.copy()
    green[:, :, grid.index_of(550)] = 1.0
    rgb = synthesize_rgb(SpectralCube(green, grid), ResponseTable.default(grid))
    print(f"550 nm renders as RGB {np.round(rgb.data[0, 0], 3)}")
