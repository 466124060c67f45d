"""
Run configuration files (TOML or JSON), validated with pydantic.

Every section rejects unknown keys. Missing sections and keys fall back to
the defaults in config.py.
"""

import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Optional, Sequence, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config import (
    LAMBDA_MIN, LAMBDA_MAX, LAMBDA_STEP,
    SOURCE_DISTANCE, FOCAL_LENGTH, GRID_SIZE, PIXEL_PITCH, PSF_CROP, PROFILE_LENGTH, DEPTH_MAX,
    DECONV_EPSILON, NOISE_SIGMA_FRACTION, NOISE_PEAK, T_POLARIZER,
    DESK_GRID_SIZE, DESK_CROP, OPT_ITERATIONS, OPT_STEP_SIZE, FD_PROBES, THREADS,
)
from datamodel.errors import ConfigurationError
from datamodel.types import ResponseTable, SpectralCube, WavelengthGrid
from design.optimizer import DesignProblem, Objective
from optics.psf import OpticalConfig, PhaseConvention, load_sellmeier
from processing.decoder import DeconvConfig, FusionMode
from processing.encoder import NoiseKind, NoiseModel


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _even(value: int, name: str) -> int:
    if value % 2:
        raise ValueError(f"{name} must be even, got {value}")
    return value


class GridSection(_Section):
    lambda_min: float = LAMBDA_MIN
    lambda_max: float = LAMBDA_MAX
    step: float = Field(LAMBDA_STEP, gt=0)

    def to_grid(self) -> WavelengthGrid:
        return WavelengthGrid(self.lambda_min, self.lambda_max, self.step)


class OpticsSection(_Section):
    z: float = Field(SOURCE_DISTANCE, gt=0)
    f: float = Field(FOCAL_LENGTH, gt=0)
    convention: PhaseConvention = PhaseConvention.PAPER_LITERAL
    grid_size: int = Field(GRID_SIZE, gt=0)
    pixel_pitch: float = Field(PIXEL_PITCH, gt=0)
    crop: int = Field(PSF_CROP, gt=0)
    widen: bool = False
    sellmeier_file: Optional[str] = None    # None: DPSE_SELLMEIER_FILE or the shipped fused-silica table

    @field_validator("grid_size", "crop")
    @classmethod
    def must_be_even(cls, value: int, info):
        return _even(value, info.field_name)


class DeconvSection(_Section):
    epsilon: float = Field(DECONV_EPSILON, ge=0)
    fusion: FusionMode = FusionMode.RESPONSE_WEIGHTED
    iterations: int = Field(0, ge=0)
    step: Optional[float] = Field(None, gt=0)


class NoiseSection(_Section):
    kind: NoiseKind = NoiseKind.NONE
    sigma: float = Field(NOISE_SIGMA_FRACTION, ge=0)
    relative: bool = True
    peak: float = Field(NOISE_PEAK, gt=0)
    bit_depth: Optional[int] = Field(None, ge=1)


class ResponseSection(_Section):
    path: Optional[str] = None
    t_polarizer: float = Field(T_POLARIZER, ge=0, le=1)


class DesignSection(_Section):
    objective: Objective = Objective.PSF_INCOHERENCE
    iterations: int = Field(OPT_ITERATIONS, ge=0)
    step_size: float = Field(OPT_STEP_SIZE, ge=0)
    depth_max: float = Field(DEPTH_MAX, gt=0)
    grid_size: int = Field(DESK_GRID_SIZE, gt=0)
    crop: int = Field(DESK_CROP, gt=0)
    profile_length: int = Field(PROFILE_LENGTH, gt=0)
    desk_grid: bool = True
    scene_count: int = Field(2, ge=1)
    quantize_levels: Optional[int] = Field(None, ge=2)
    snapshot_every: int = Field(0, ge=0)
    probes: int = Field(FD_PROBES, ge=1)

    @field_validator("grid_size", "crop")
    @classmethod
    def must_be_even(cls, value: int, info):
        return _even(value, info.field_name)

    @model_validator(mode="after")
    def crop_fits(self):
        if self.crop > self.grid_size:
            raise ValueError(f"design crop {self.crop} exceeds design grid_size {self.grid_size}")
        return self


class RunConfig(_Section):
    grid: GridSection = Field(default_factory=GridSection)
    optics: OpticsSection = Field(default_factory=OpticsSection)
    deconv: DeconvSection = Field(default_factory=DeconvSection)
    noise: NoiseSection = Field(default_factory=NoiseSection)
    response: ResponseSection = Field(default_factory=ResponseSection)
    design: DesignSection = Field(default_factory=DesignSection)
    seed: int = 0
    threads: int = Field(THREADS, ge=1)

    def wavelength_grid(self) -> WavelengthGrid:
        return self.grid.to_grid()

    def optical_config(self) -> OpticalConfig:
        coefficients = load_sellmeier(self.optics.sellmeier_file) if self.optics.sellmeier_file else None
        return OpticalConfig(self.optics.z, self.optics.f, self.optics.convention, coefficients)

    def deconv_config(self) -> DeconvConfig:
        return DeconvConfig(self.deconv.epsilon, self.deconv.fusion, self.deconv.iterations, self.deconv.step)

    def noise_model(self) -> NoiseModel:
        n = self.noise
        return NoiseModel(n.kind, n.sigma, n.relative, n.peak, self.seed, n.bit_depth)

    def response_table(self, grid: WavelengthGrid = None) -> ResponseTable:
        """Table from response.path when set, otherwise the default curves on `grid`."""
        if self.response.path:
            from storage.formats import read_response
            return read_response(self.response.path)
        return ResponseTable.default(grid or self.wavelength_grid(), self.response.t_polarizer)

    def design_grid(self) -> WavelengthGrid:
        return WavelengthGrid.desk() if self.design.desk_grid else self.wavelength_grid()

    def design_problem(self, scenes: Sequence[SpectralCube] = ()) -> DesignProblem:
        """
        Optimizer problem; RECON_MSE without explicit scenes trains on
        synthetic patches drawn with the run seed.
        """
        from storage.scenes import training_patches

        d = self.design
        grid = self.design_grid()
        scenes = tuple(scenes)
        if d.objective is Objective.RECON_MSE and not scenes:
            scenes = tuple(training_patches(d.scene_count, grid=grid, seed=self.seed))
        return DesignProblem(
            training_scenes=scenes,
            optical=self.optical_config(),
            response=self.response_table(grid),
            objective=d.objective,
            depth_max=d.depth_max,
            iterations=d.iterations,
            step_size=d.step_size,
            seed=self.seed,
            grid_size=d.grid_size,
            pixel_pitch=self.optics.pixel_pitch,
            crop=d.crop,
            profile_length=d.profile_length,
            epsilon=self.deconv.epsilon,
            fusion=self.deconv.fusion,
            quantize_levels=d.quantize_levels,
            workers=self.threads,
        )


def load_run_config(path: Union[str, Path, None] = None) -> RunConfig:
    """
    Parse a .toml or .json run configuration; no path means all defaults.

    Raises:
        ConfigurationError: unreadable file, unsupported extension or schema violation
    """
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as fh:
                payload = tomllib.load(fh)
        elif path.suffix == ".json":
            payload = json.loads(path.read_text(encoding="utf-8"))
        else:
            raise ConfigurationError(f"Config {path} must be .toml or .json")
    except FileNotFoundError:
        raise ConfigurationError(f"Config file {path} not found")
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"Config {path} does not parse: {e}")

    try:
        return RunConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid config {path}:\n{e}")
