"""
Ingestion of hyperspectral cubes from outside sources.

MATRIX_TEXT: whitespace-separated text, one pixel per row (row-major), one
band per column. Comment lines carry the metadata:

    # shape: <height> <width>
    # wavelengths: 400 410 ... 700

PLANAR_PNG_STACK: a directory of single-channel band_00.png, band_01.png, ...
with an optional wavelengths.txt listing one band center per entry.

Both are resampled to the default wavelength grid by linear interpolation when
their own grid differs; bands outside the source range hold the edge value.
"""

import logging
import re
from enum import Enum
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from scipy.interpolate import interp1d
from skimage import io as skio

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from datamodel.errors import ConfigurationError, FormatError
from datamodel.types import SpectralCube, WavelengthGrid

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

BAND_FILE = re.compile(r"^band_(\d+)\.png$")


class ExternalFormat(str, Enum):
    MATRIX_TEXT = "MATRIX_TEXT"
    PLANAR_PNG_STACK = "PLANAR_PNG_STACK"


def resample_bands(data: np.ndarray, source_nm: np.ndarray, target: WavelengthGrid) -> np.ndarray:
    """Linear interpolation along the band axis onto the target grid."""
    source_nm = np.asarray(source_nm, dtype=np.float64)
    if source_nm.size != data.shape[2]:
        raise FormatError(f"{source_nm.size} wavelengths for {data.shape[2]} bands")
    if source_nm.size == 1:
        return np.repeat(data, target.count, axis=2)
    if np.any(np.diff(source_nm) <= 0):
        raise FormatError("Source wavelengths must be strictly increasing")
    query = np.clip(target.wavelengths, source_nm[0], source_nm[-1])
    return interp1d(source_nm, data, axis=2, kind="linear", assume_sorted=True)(query)


def _to_default_grid(data: np.ndarray, source_nm: Optional[np.ndarray], target: WavelengthGrid) -> SpectralCube:
    if source_nm is None:
        if data.shape[2] != target.count:
            raise FormatError(
                f"No wavelengths given and {data.shape[2]} bands do not match the {target.count}-band grid"
            )
        return SpectralCube(data, target)
    if source_nm.size == target.count and np.allclose(source_nm, target.wavelengths, atol=1e-6):
        return SpectralCube(data, target)
    logger.info(f"Resampling {source_nm.size} bands ({source_nm[0]:.0f}-{source_nm[-1]:.0f} nm) "
                f"onto {target.count} bands")
    return SpectralCube(resample_bands(data, source_nm, target), target)


def _read_matrix_text(path: Path):
    shape, wavelengths = None, None
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise FormatError(f"Missing file {path}")
    for line in lines:
        stripped = line.strip()
        if not stripped.startswith("#"):
            continue
        key, _, value = stripped.lstrip("#").partition(":")
        key = key.strip().lower()
        try:
            if key == "shape":
                shape = tuple(int(v) for v in value.split())
            elif key == "wavelengths":
                wavelengths = np.array([float(v) for v in value.split()])
        except ValueError as e:
            raise FormatError(f"Metadata line '{key}' of {path} does not parse: {e}")
    if shape is None or len(shape) != 2:
        raise FormatError(f"{path} needs a '# shape: <height> <width>' line")

    try:
        matrix = np.loadtxt(path, comments="#", ndmin=2)
    except ValueError as e:
        raise FormatError(f"{path} holds a malformed row: {e}")
    height, width = shape
    if matrix.shape[0] != height * width:
        raise FormatError(f"{path} has {matrix.shape[0]} rows, shape implies {height * width}")
    if wavelengths is not None and wavelengths.size != matrix.shape[1]:
        raise FormatError(f"{path} lists {wavelengths.size} wavelengths for {matrix.shape[1]} band columns")
    return matrix.reshape(height, width, matrix.shape[1]), wavelengths


def _as_unit_range(image: np.ndarray) -> np.ndarray:
    if np.issubdtype(image.dtype, np.integer):
        return image.astype(np.float64) / np.iinfo(image.dtype).max
    return image.astype(np.float64)


def _read_png_stack(directory: Path):
    if not directory.is_dir():
        raise FormatError(f"{directory} is not a directory")
    found = {}
    for entry in directory.iterdir():
        match = BAND_FILE.match(entry.name)
        if match:
            found[int(match.group(1))] = entry

    wavelengths = None
    listing = directory / "wavelengths.txt"
    if listing.exists():
        try:
            wavelengths = np.array([float(v) for v in listing.read_text(encoding="utf-8").split()])
        except ValueError as e:
            raise FormatError(f"{listing} does not parse: {e}")
        count = wavelengths.size
    else:
        count = max(found) + 1 if found else 0
    if count == 0:
        raise FormatError(f"No band_XX.png files in {directory}")

    bands: List[np.ndarray] = []
    for index in range(count):
        if index not in found:
            raise FormatError(f"Band file for index {index} (band_{index:02d}.png) is missing in {directory}")
        image = skio.imread(str(found[index]))
        if image.ndim != 2:
            raise FormatError(f"{found[index].name} must be single-channel, got shape {image.shape}")
        if bands and image.shape != bands[0].shape:
            raise FormatError(
                f"{found[index].name} is {image.shape[0]}x{image.shape[1]}, "
                f"band 0 is {bands[0].shape[0]}x{bands[0].shape[1]}"
            )
        bands.append(_as_unit_range(image))
    extra = sorted(i for i in found if i >= count)
    if extra:
        logger.warning(f"Ignoring band files beyond the {count} listed wavelengths: {extra}")
    return np.stack(bands, axis=2), wavelengths


def ingest_external_cube(path: PathLike, fmt: ExternalFormat,
                         target: WavelengthGrid = None) -> SpectralCube:
    """
    Load an external cube and bring it onto the default 31-band grid.

    Args:
        path: Text file (MATRIX_TEXT) or directory (PLANAR_PNG_STACK)
        fmt: Source format
        target: Grid to resample onto

    Returns:
        SpectralCube on the target grid
    """
    try:
        fmt = ExternalFormat(fmt)
    except ValueError:
        raise ConfigurationError(f"Unknown external format {fmt!r}")
    target = target or WavelengthGrid()
    path = Path(path)

    if fmt is ExternalFormat.MATRIX_TEXT:
        data, wavelengths = _read_matrix_text(path)
    else:
        data, wavelengths = _read_png_stack(path)
    logger.info(f"Read {data.shape[0]}x{data.shape[1]}x{data.shape[2]} cube from {path}")
    return _to_default_grid(data, wavelengths, target)


if __name__ == "__main__":
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        source = Path(tmp) / "cube.txt"
        wl = np.arange(400, 701, 20)
        rows = np.tile(wl / 700.0, (4, 1))
        header = "shape: 2 2\nwavelengths: " + " ".join(str(w) for w in wl)
        np.savetxt(source, rows, header=header, comments="# ")
        cube = ingest_external_cube(source, ExternalFormat.MATRIX_TEXT)
        print(f"{cube.shape}, 410 nm value {cube.data[0, 0, 1]:.4f}")
