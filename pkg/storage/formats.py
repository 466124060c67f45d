"""
On-disk formats.

Every array artifact is a raw little-endian float32 payload next to a JSON
sidecar (`<payload>.json`). The sidecar starts with a "kind" key and keeps a
fixed key order so files are byte-stable across platforms. Measurement sets
are directories holding four RGB files and a manifest.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from datamodel.errors import FormatError
from datamodel.types import AnalyzerConfig, RGBImage, ResponseTable, SpectralCube, StokesCube, WavelengthGrid
from optics.doe import HeightMap, HeightProfile
from optics.psf import PsfStack
from processing.encoder import MeasurementSet, NoiseModel

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DTYPE = "f32le"
MANIFEST_NAME = "manifest.json"
MEASUREMENT_NAMES = ("m1.rgb", "m2.rgb", "m3.rgb", "m4.rgb")


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _dump_json(payload: dict, path: Path):
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _write_payload(path: PathLike, header: dict, array: np.ndarray):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(array, dtype="<f4").tobytes())
    _dump_json(header, sidecar_path(path))
    logger.debug(f"Wrote {header['kind']} to {path}")


def read_header(path: PathLike, kind: str) -> dict:
    """Load and type-check a sidecar."""
    side = sidecar_path(path)
    try:
        header = json.loads(side.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError(f"Missing header {side}")
    except json.JSONDecodeError as e:
        raise FormatError(f"Header {side} is not valid JSON: {e}")
    if not isinstance(header, dict):
        raise FormatError(f"Header {side} must be a JSON object")
    if header.get("kind") != kind:
        raise FormatError(f"Field 'kind' of {side} is {header.get('kind')!r}, expected {kind!r}")
    if header.get("dtype") != DTYPE:
        raise FormatError(f"Field 'dtype' of {side} is {header.get('dtype')!r}, only {DTYPE!r} is supported")
    return header


def _field(header: dict, name: str, expected_type=int):
    if name not in header:
        raise FormatError(f"Header is missing field '{name}'")
    value = header[name]
    if expected_type is int:
        if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
            raise FormatError(f"Field '{name}' must be a positive integer, got {value!r}")
    elif expected_type is list:
        if not isinstance(value, list):
            raise FormatError(f"Field '{name}' must be a list, got {type(value).__name__}")
    return value


def _expect_layout(header: dict, layout: str):
    if header.get("layout") != layout:
        raise FormatError(f"Field 'layout' is {header.get('layout')!r}, expected {layout!r}")


def _read_payload(path: PathLike, shape: Tuple[int, ...]) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise FormatError(f"Missing payload {path}")
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise FormatError(f"Payload length of {path} is {len(raw)} bytes, header implies {expected}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def _grid_from_header(header: dict, bands: int) -> WavelengthGrid:
    wavelengths = _field(header, "wavelengths", list)
    if len(wavelengths) != bands:
        raise FormatError(f"Field 'wavelengths' has {len(wavelengths)} entries but 'bands' is {bands}")
    try:
        return WavelengthGrid.from_wavelengths(wavelengths)
    except Exception as e:
        raise FormatError(f"Field 'wavelengths' is not a uniform grid: {e}")


def _wavelength_list(grid: WavelengthGrid) -> list:
    return [float(w) for w in grid.wavelengths]


# Spectral cubes

def write_cube(cube: SpectralCube, path: PathLike):
    header = {
        "kind": "SpectralCube",
        "width": cube.width,
        "height": cube.height,
        "bands": cube.grid.count,
        "wavelengths": _wavelength_list(cube.grid),
        "dtype": DTYPE,
        "layout": "band-major",
    }
    _write_payload(path, header, np.moveaxis(cube.data, 2, 0))


def read_cube(path: PathLike) -> SpectralCube:
    header = read_header(path, "SpectralCube")
    _expect_layout(header, "band-major")
    w, h, b = _field(header, "width"), _field(header, "height"), _field(header, "bands")
    grid = _grid_from_header(header, b)
    data = _read_payload(path, (b, h, w))
    return SpectralCube(np.moveaxis(data, 0, 2), grid)


def write_stokes(stokes: StokesCube, path: PathLike):
    header = {
        "kind": "StokesCube",
        "width": stokes.width,
        "height": stokes.height,
        "bands": stokes.grid.count,
        "wavelengths": _wavelength_list(stokes.grid),
        "dtype": DTYPE,
        "layout": "component-band-major",
    }
    _write_payload(path, header, np.moveaxis(stokes.stacked(), 3, 1))


def read_stokes(path: PathLike) -> StokesCube:
    header = read_header(path, "StokesCube")
    _expect_layout(header, "component-band-major")
    w, h, b = _field(header, "width"), _field(header, "height"), _field(header, "bands")
    grid = _grid_from_header(header, b)
    data = _read_payload(path, (4, b, h, w))
    return StokesCube.from_stacked(np.moveaxis(data, 1, 3), grid)


# RGB measurements

def write_rgb(image: RGBImage, path: PathLike):
    header = {
        "kind": "RGBImage",
        "width": image.width,
        "height": image.height,
        "channels": 3,
        "dtype": DTYPE,
        "layout": "channel-major",
    }
    _write_payload(path, header, np.moveaxis(image.data, 2, 0))


def read_rgb(path: PathLike) -> RGBImage:
    header = read_header(path, "RGBImage")
    _expect_layout(header, "channel-major")
    w, h = _field(header, "width"), _field(header, "height")
    if header.get("channels") != 3:
        raise FormatError(f"Field 'channels' must be 3, got {header.get('channels')!r}")
    return RGBImage(np.moveaxis(_read_payload(path, (3, h, w)), 0, 2))


# Optics

def write_psf(stack: PsfStack, path: PathLike):
    energy = None if stack.energy_fraction is None else [float(e) for e in stack.energy_fraction]
    header = {
        "kind": "PsfStack",
        "k": stack.k,
        "bands": stack.grid.count,
        "wavelengths": _wavelength_list(stack.grid),
        "dtype": DTYPE,
        "layout": "band-major",
        "energy_fraction": energy,
        "metadata": stack.metadata,
    }
    _write_payload(path, header, stack.kernels)


def read_psf(path: PathLike) -> PsfStack:
    header = read_header(path, "PsfStack")
    _expect_layout(header, "band-major")
    k, b = _field(header, "k"), _field(header, "bands")
    grid = _grid_from_header(header, b)
    kernels = _read_payload(path, (b, k, k))
    energy = header.get("energy_fraction")
    if energy is not None and len(energy) != b:
        raise FormatError(f"Field 'energy_fraction' has {len(energy)} entries but 'bands' is {b}")
    return PsfStack(grid, kernels, energy, header.get("metadata") or {})


def write_height_map(height_map: HeightMap, path: PathLike):
    header = {
        "kind": "HeightMap",
        "n": height_map.n,
        "pixel_pitch": height_map.pixel_pitch,
        "depth": height_map.depth,
        "levels": height_map.levels,
        "dtype": DTYPE,
        "layout": "height-then-mask",
    }
    _write_payload(path, header, np.stack([height_map.h, height_map.aperture_mask.astype(np.float64)]))


def read_height_map(path: PathLike) -> HeightMap:
    header = read_header(path, "HeightMap")
    _expect_layout(header, "height-then-mask")
    n = _field(header, "n")
    data = _read_payload(path, (2, n, n))
    return HeightMap(data[0], float(header["pixel_pitch"]), data[1] > 0.5,
                     depth=float(header["depth"]), levels=header.get("levels"))


def write_profile(profile: HeightProfile, path: PathLike):
    header = {
        "kind": "HeightProfile",
        "length": profile.length,
        "depth_max": profile.depth_max,
        "dtype": DTYPE,
        "layout": "vector",
    }
    _write_payload(path, header, profile.w)


def read_profile(path: PathLike) -> HeightProfile:
    header = read_header(path, "HeightProfile")
    _expect_layout(header, "vector")
    length = _field(header, "length")
    depth = float(header.get("depth_max", 0.0))
    if depth <= 0:
        raise FormatError(f"Field 'depth_max' must be positive, got {header.get('depth_max')!r}")
    w = _read_payload(path, (length,))
    # float32 rounding can land a hair outside [0, depth_max]
    return HeightProfile(np.clip(w, 0.0, depth), depth)


# Response tables

RESPONSE_COLUMNS = ("wavelength_nm", "t_polarizer", "r_red", "r_green", "r_blue")


def write_response(table: ResponseTable, path: PathLike):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESPONSE_COLUMNS)
        for wl, t, r in zip(table.grid.wavelengths, table.t_polarizer, table.r_camera):
            writer.writerow([repr(float(wl)), repr(float(t))] + [repr(float(v)) for v in r])


def read_response(path: PathLike) -> ResponseTable:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise FormatError(f"Missing response table {path}")
    if not rows or tuple(rows[0]) != RESPONSE_COLUMNS:
        raise FormatError(f"Response table {path} must start with the header {','.join(RESPONSE_COLUMNS)}")
    try:
        values = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=np.float64)
    except ValueError as e:
        raise FormatError(f"Response table {path} holds a non-numeric value: {e}")
    if values.ndim != 2 or values.shape[1] != len(RESPONSE_COLUMNS):
        raise FormatError(f"Response table {path} must have {len(RESPONSE_COLUMNS)} columns per row")
    grid = WavelengthGrid.from_wavelengths(values[:, 0])
    return ResponseTable(grid, values[:, 1], values[:, 2:])


# Measurement sets

def _response_echo(response: Optional[ResponseTable]) -> Optional[dict]:
    if response is None:
        return None
    return {
        "grid": response.grid.to_dict(),
        "t_polarizer": [float(t) for t in response.t_polarizer],
        "r_camera": [[float(v) for v in row] for row in response.r_camera],
    }


def write_measurement_set(measurements: MeasurementSet, directory: PathLike,
                          response: Optional[ResponseTable] = None,
                          psf_reference: Optional[str] = None) -> Path:
    """Write M1..M4 and the scene manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for image, name in zip(measurements.images, MEASUREMENT_NAMES):
        write_rgb(image, directory / name)

    manifest = {
        "kind": "SceneManifest",
        "measurements": list(MEASUREMENT_NAMES),
        "configs": [c.value for c in measurements.configs],
        "seeds": [int(s) for s in measurements.seeds],
        "noise": measurements.noise.to_dict() if measurements.noise else None,
        "response": _response_echo(response),
        "psf": psf_reference,
        "metadata": measurements.metadata,
    }
    path = directory / MANIFEST_NAME
    _dump_json(manifest, path)
    return path


def read_measurement_set(path: PathLike) -> MeasurementSet:
    """Accepts the manifest file or its directory."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError(f"Missing manifest {path}")
    except json.JSONDecodeError as e:
        raise FormatError(f"Manifest {path} is not valid JSON: {e}")
    if manifest.get("kind") != "SceneManifest":
        raise FormatError(f"Field 'kind' of {path} is {manifest.get('kind')!r}, expected 'SceneManifest'")

    names = manifest.get("measurements")
    configs = manifest.get("configs")
    if not isinstance(names, list) or len(names) != 4:
        raise FormatError("Field 'measurements' must list exactly 4 files")
    if not isinstance(configs, list) or len(configs) != 4:
        raise FormatError("Field 'configs' must list exactly 4 analyzer configurations")
    try:
        configs = tuple(AnalyzerConfig(c) for c in configs)
    except ValueError as e:
        raise FormatError(f"Field 'configs': {e}")
    if len(set(configs)) != 4:
        raise FormatError("Field 'configs' must hold 4 distinct analyzer configurations")

    images = tuple(read_rgb(path.parent / name) for name in names)
    noise = NoiseModel(**manifest["noise"]) if manifest.get("noise") else None
    return MeasurementSet(images, configs, tuple(manifest.get("seeds") or ()), noise,
                          manifest.get("metadata") or {})


def manifest_response(path: PathLike) -> Optional[ResponseTable]:
    """Response table echoed in a manifest, if any."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    echo = json.loads(path.read_text(encoding="utf-8")).get("response")
    if not echo:
        return None
    return ResponseTable(WavelengthGrid(**echo["grid"]), echo["t_polarizer"], echo["r_camera"])


def sniff_kind(path: PathLike) -> str:
    """The 'kind' key of a payload's sidecar."""
    try:
        return json.loads(sidecar_path(path).read_text(encoding="utf-8")).get("kind", "")
    except (FileNotFoundError, json.JSONDecodeError) as e:
        raise FormatError(f"Cannot read header of {path}: {e}")


if __name__ == "__main__":
    import tempfile

    grid = WavelengthGrid()
    cube = SpectralCube(np.random.default_rng(0).random((8, 8, grid.count)).astype(np.float32), grid)
    with tempfile.TemporaryDirectory() as tmp:
        target = Path(tmp) / "scene.cube"
        write_cube(cube, target)
        back = read_cube(target)
        print(f"Round trip identical: {np.array_equal(back.data, cube.data)}")
        print(sidecar_path(target).read_text())
