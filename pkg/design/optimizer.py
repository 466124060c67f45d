"""
Gradient-based design of the radial height profile.

Both objectives are differentiated analytically with respect to the 512
profile heights by chaining adjoints backwards through the pipeline:

    loss -> linear fusion -> Wiener filter (rational in F(P))
         -> encoder convolution -> crop / L1 normalization
         -> |F{U3}|^2 -> exp(i k (n - 1) h) -> ring sums

The descent itself is a projected first-order method with per-coordinate
step scaling and momentum; a step is accepted only if it does not increase
the objective.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import fft as sfft
from scipy.signal import fftconvolve
from tqdm import tqdm

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import (
    DEPTH_MAX, PIXEL_PITCH, PROFILE_LENGTH, DECONV_EPSILON,
    DESK_GRID_SIZE, DESK_CROP, DESK_PATCH_SIZE,
    OPT_ITERATIONS, OPT_STEP_SIZE, OPT_BETA1, OPT_BETA2, OPT_MAX_BACKTRACKS,
    FD_STEP, FD_PROBES, THREADS,
)
from datamodel.errors import ConfigurationError, NumericalError, ShapeError, SingularityError
from datamodel.types import ResponseTable, SpectralCube, WavelengthGrid
from optics.doe import HeightMap, HeightProfile, quantize_profile, rasterize_adjoint, rasterize_values, reachable_rings
from optics.psf import OpticalConfig, PsfStack, crop_window, pad_kernel, sensor_spectrum, unpad_kernel
from processing.decoder import FusionMode, fusion_weights
from processing.encoder import convolve

logger = logging.getLogger(__name__)


class Objective(str, Enum):
    RECON_MSE = "RECON_MSE"
    PSF_INCOHERENCE = "PSF_INCOHERENCE"


@dataclass(frozen=True, eq=False)
class DesignProblem:
    """
    Everything the objective depends on.

    Profile heights are bounded to [0, depth_max]. The optical grid is
    grid_size x grid_size with kernels cropped to crop x crop; wavelengths
    come from the response table's grid.
    """

    training_scenes: Tuple[SpectralCube, ...] = ()
    optical: OpticalConfig = field(default_factory=OpticalConfig)
    response: Optional[ResponseTable] = None
    objective: Objective = Objective.PSF_INCOHERENCE
    depth_max: float = DEPTH_MAX
    iterations: int = OPT_ITERATIONS
    step_size: float = OPT_STEP_SIZE
    seed: int = 0
    grid_size: int = DESK_GRID_SIZE
    pixel_pitch: float = PIXEL_PITCH
    crop: int = DESK_CROP
    profile_length: int = PROFILE_LENGTH
    epsilon: float = DECONV_EPSILON
    fusion: FusionMode = FusionMode.RESPONSE_WEIGHTED
    quantize_levels: Optional[int] = None
    workers: int = THREADS

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective(self.objective))
        object.__setattr__(self, "fusion", FusionMode(self.fusion))
        object.__setattr__(self, "training_scenes", tuple(self.training_scenes))
        if self.response is None:
            object.__setattr__(self, "response", ResponseTable.default(WavelengthGrid.desk()))

        if self.objective is Objective.RECON_MSE and not self.training_scenes:
            raise ConfigurationError("RECON_MSE needs at least one training scene")
        for i, scene in enumerate(self.training_scenes):
            if scene.grid != self.response.grid:
                raise ShapeError(f"Training scene {i} grid {scene.grid} differs from the response grid")
        if self.depth_max <= 0:
            raise ConfigurationError(f"depth_max must be positive, got {self.depth_max}")
        if self.iterations < 0:
            raise ConfigurationError(f"iterations must be >= 0, got {self.iterations}")
        if self.step_size < 0:
            raise ConfigurationError(f"step_size must be >= 0, got {self.step_size}")
        if self.grid_size <= 0 or self.grid_size % 2:
            raise ConfigurationError(f"grid_size must be a positive even number, got {self.grid_size}")
        if self.crop <= 0 or self.crop % 2 or self.crop > self.grid_size:
            raise ConfigurationError(f"crop must be even and within the {self.grid_size} grid, got {self.crop}")
        if self.profile_length < 1:
            raise ConfigurationError(f"profile_length must be >= 1, got {self.profile_length}")
        if self.epsilon < 0:
            raise ConfigurationError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.quantize_levels is not None and self.quantize_levels < 2:
            raise ConfigurationError(f"quantize_levels must be >= 2, got {self.quantize_levels}")

    @property
    def grid(self) -> WavelengthGrid:
        return self.response.grid

    @classmethod
    def desk(cls, objective: Objective = Objective.PSF_INCOHERENCE, seed: int = 0,
             scene_count: int = 2, **overrides) -> "DesignProblem":
        """128 x 128 grid, 8 bands, 32 x 32 synthetic training patches."""
        from storage.scenes import training_patches

        grid = WavelengthGrid.desk()
        objective = Objective(objective)
        scenes = ()
        if objective is Objective.RECON_MSE:
            scenes = tuple(training_patches(scene_count, DESK_PATCH_SIZE, grid, seed))
        kwargs = dict(training_scenes=scenes, response=ResponseTable.default(grid),
                      objective=objective, seed=seed)
        kwargs.update(overrides)
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class GradientReport:
    analytic: np.ndarray
    finite_difference: np.ndarray
    max_rel_error: float
    probe_indices: List[int]


@dataclass
class TrajectoryRow:
    iteration: int
    objective: float
    step_size: float
    accepted: bool


@dataclass(eq=False)
class OptimizationResult:
    profile: HeightProfile
    trajectory: List[TrajectoryRow]
    profiles: List[np.ndarray]
    quantized_profile: Optional[HeightProfile] = None
    quantized_objective: Optional[float] = None

    @property
    def initial_objective(self) -> float:
        return self.trajectory[0].objective

    @property
    def final_objective(self) -> float:
        return self.trajectory[-1].objective


# PSF_INCOHERENCE

def psf_incoherence_terms(kernels: Union[np.ndarray, PsfStack]) -> Tuple[float, float]:
    """
    (cross, center): sum over ordered band pairs b != b' of <p_b, p_b'>^2, and
    the sum of every kernel's center value.
    """
    if isinstance(kernels, PsfStack):
        kernels = kernels.kernels
    k = kernels.shape[1]
    flat = kernels.reshape(kernels.shape[0], -1)
    gram = flat @ flat.T
    cross = float((gram ** 2).sum() - (np.diag(gram) ** 2).sum())
    center = float(kernels[:, k // 2, k // 2].sum())
    return cross, center


def psf_incoherence(kernels: Union[np.ndarray, PsfStack]) -> float:
    """cross - center + bands; the offset keeps the value >= 0 and leaves the gradient alone."""
    if isinstance(kernels, PsfStack):
        kernels = kernels.kernels
    cross, center = psf_incoherence_terms(kernels)
    return cross - center + kernels.shape[0]


def _incoherence_kernel_gradient(kernels: np.ndarray) -> np.ndarray:
    bands, k, _ = kernels.shape
    flat = kernels.reshape(bands, -1)
    gram = flat @ flat.T
    np.fill_diagonal(gram, 0.0)
    grad = (4.0 * gram @ flat).reshape(bands, k, k)
    grad[:, k // 2, k // 2] -= 1.0
    return grad


# RECON_MSE

def _wiener_parts(kernels: np.ndarray, shape: Tuple[int, int], epsilon: float):
    """
    Per-band F(P) and the Wiener denominator |F(P)|^2 + eps |F(P)(0)|^2, stacked
    on the last axis. For nonnegative kernels the DC power is the spectral maximum.
    """
    padded = np.stack([pad_kernel(kernel, shape) for kernel in kernels], axis=-1)
    spectrum = sfft.fft2(padded, axes=(0, 1))
    power = np.abs(spectrum) ** 2
    denominator = power + epsilon * power[0, 0, :]
    if np.any(denominator == 0):
        row, col, band = np.argwhere(denominator == 0)[0]
        raise SingularityError(
            f"Kernel spectrum of band {band} vanishes at frequency bin ({row}, {col}) and epsilon = 0",
            frequency_bin=(int(row), int(col)),
        )
    return spectrum, denominator


def _kernel_correlation(scene: np.ndarray, adjoint_image: np.ndarray, k: int) -> np.ndarray:
    """
    Gradient of <adjoint_image, convolve(scene, K)> with respect to each band's
    kernel: G_K[u] = sum_y g[y] x[y + k/2 - u].
    """
    h, w = scene.shape[:2]
    full = fftconvolve(scene, adjoint_image[::-1, ::-1, :], mode="full", axes=(0, 1))
    full = np.pad(full, ((k, k), (k, k), (0, 0)))
    shifts = k // 2 - np.arange(k)
    rows = shifts + h - 1 + k
    cols = shifts + w - 1 + k
    return np.moveaxis(full[rows[:, None], cols[None, :], :], 2, 0)


def _recon_scene(kernels: np.ndarray, scene: np.ndarray, response_weights: np.ndarray,
                 fuse_weights: np.ndarray, epsilon: float, with_gradient: bool):
    """MSE of one scene's noiseless reconstruction and, optionally, d(MSE)/d(kernels)."""
    h, w, bands = scene.shape
    k = kernels.shape[1]
    measurement = convolve(scene, kernels) @ response_weights                    # (H, W, 3)
    measured_spectrum = sfft.fft2(measurement, axes=(0, 1))
    fused_spectrum = measured_spectrum @ fuse_weights.T                           # (H, W, B)

    spectrum, denominator = _wiener_parts(kernels, (h, w), epsilon)
    filt = np.conj(spectrum) / denominator
    estimate = sfft.ifft2(filt * fused_spectrum, axes=(0, 1)).real
    residual = estimate - scene
    value = float(np.mean(residual ** 2))
    if not with_gradient:
        return value, None

    grad_estimate = 2.0 * residual / residual.size
    grad_spectrum = sfft.fft2(grad_estimate, axes=(0, 1))

    # Through the measurement
    grad_band = sfft.ifft2(grad_spectrum * np.conj(filt), axes=(0, 1)).real      # (H, W, B)
    grad_measurement = grad_band @ fuse_weights                                   # (H, W, 3)
    grad_kernels = _kernel_correlation(scene, grad_measurement @ response_weights.T, k)

    # Through the Wiener filter
    psi = np.conj(grad_spectrum) * fused_spectrum / (h * w)
    rho = (psi * np.conj(spectrum) / denominator ** 2).real
    omega = np.conj(psi / denominator) - 2.0 * rho * np.conj(spectrum)
    omega[0, 0, :] -= 2.0 * epsilon * rho.sum(axis=(0, 1)) * np.conj(spectrum[0, 0, :])
    grad_padded = sfft.fft2(omega, axes=(0, 1)).real
    grad_kernels += np.stack([unpad_kernel(grad_padded[:, :, b], k) for b in range(bands)])
    return value, grad_kernels


def reconstruction_mse(kernels: Union[np.ndarray, PsfStack], scenes: Sequence[SpectralCube],
                       response: ResponseTable, epsilon: float = DECONV_EPSILON,
                       fusion: FusionMode = FusionMode.RESPONSE_WEIGHTED) -> float:
    """
    Mean over scenes of the per-voxel MSE of the unrefined reconstruction.

    The estimate is taken before the >= 0 clip that fuse() applies, which
    keeps the objective differentiable everywhere.
    """
    value, _ = _recon(kernels.kernels if isinstance(kernels, PsfStack) else np.asarray(kernels),
                      scenes, response, epsilon, fusion, with_gradient=False)
    return value


def _recon(kernels, scenes, response, epsilon, fusion, with_gradient):
    weights = response.weights
    fuse_w = fusion_weights(response, fusion)
    total, grad = 0.0, None
    for scene in scenes:
        value, g = _recon_scene(kernels, scene.data, weights, fuse_w, epsilon, with_gradient)
        total += value
        if g is not None:
            grad = g if grad is None else grad + g
    count = len(scenes)
    return total / count, (None if grad is None else grad / count)


# Profile -> kernels and back

@dataclass(eq=False)
class _BandTrace:
    field: np.ndarray       # U3
    spectrum: np.ndarray    # F{U3}
    crop_sum: float
    kernel: np.ndarray


class _Pipeline:
    """Differentiable profile -> PSF chain for one problem."""

    def __init__(self, problem: DesignProblem):
        self.problem = problem
        self.n = problem.grid_size
        self.window = crop_window(self.n, problem.crop)
        self.wavelengths = problem.grid.wavelengths
        self.indices = problem.optical.dispersion(problem.grid)

    def _map(self, fn, items):
        if self.problem.workers > 1:
            with ThreadPoolExecutor(max_workers=self.problem.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(item) for item in items]

    def traces(self, w: np.ndarray) -> List[_BandTrace]:
        if w.size != self.problem.profile_length:
            raise ShapeError(f"Profile has {w.size} entries, problem expects {self.problem.profile_length}")
        h, mask = rasterize_values(w, self.n)
        height_map = HeightMap(h, self.problem.pixel_pitch, mask, depth=self.problem.depth_max)

        def one_band(b: int) -> _BandTrace:
            u3, spectrum = sensor_spectrum(self.problem.optical, height_map, self.wavelengths[b], self.indices[b])
            cropped = sfft.fftshift(np.abs(spectrum) ** 2)[self.window, self.window]
            total = float(cropped.sum())
            if not np.isfinite(total) or total <= 0:
                raise NumericalError(f"PSF crop holds no energy at {self.wavelengths[b]:.0f} nm",
                                     {"band": b, "crop_sum": total})
            return _BandTrace(u3, spectrum, total, cropped / total)

        return self._map(one_band, range(self.problem.grid.count))

    def objective(self, kernels: np.ndarray, with_gradient: bool):
        problem = self.problem
        if problem.objective is Objective.PSF_INCOHERENCE:
            value = psf_incoherence(kernels)
            grad = _incoherence_kernel_gradient(kernels) if with_gradient else None
        else:
            value, grad = _recon(kernels, problem.training_scenes, problem.response,
                                 problem.epsilon, problem.fusion, with_gradient)
        return value, grad

    def value(self, w: np.ndarray) -> float:
        kernels = np.stack([t.kernel for t in self.traces(w)])
        return self.objective(kernels, with_gradient=False)[0]

    def value_and_gradient(self, w: np.ndarray) -> Tuple[float, np.ndarray]:
        traces = self.traces(w)
        kernels = np.stack([t.kernel for t in traces])
        value, grad_kernels = self.objective(kernels, with_gradient=True)
        if not np.isfinite(value) or not np.all(np.isfinite(grad_kernels)):
            raise NumericalError("Objective or kernel gradient is not finite",
                                 {"objective": value, "nonfinite_entries": int((~np.isfinite(grad_kernels)).sum())})

        def one_band(b: int) -> np.ndarray:
            trace = traces[b]
            grad_crop = (grad_kernels[b] - float((grad_kernels[b] * trace.kernel).sum())) / trace.crop_sum
            grad_shifted = np.zeros((self.n, self.n))
            grad_shifted[self.window, self.window] = grad_crop
            grad_intensity = sfft.ifftshift(grad_shifted)
            back = sfft.fft2(grad_intensity * np.conj(trace.spectrum))
            wavenumber = 2.0 * np.pi / (self.wavelengths[b] * 1e-9)
            return -2.0 * wavenumber * (self.indices[b] - 1.0) * np.imag(back * trace.field)

        grad_map = np.sum(self._map(one_band, range(len(traces))), axis=0)
        return value, rasterize_adjoint(grad_map, self.problem.profile_length)

    def psf_stack(self, w: np.ndarray) -> PsfStack:
        traces = self.traces(w)
        return PsfStack(self.problem.grid, np.stack([t.kernel for t in traces]))


# Public operations

def objective_value(problem: DesignProblem, profile: HeightProfile) -> float:
    """Objective of a profile; >= 0 for both objectives."""
    return _Pipeline(problem).value(profile.w)


def gradient(problem: DesignProblem, profile: HeightProfile) -> np.ndarray:
    """Analytic d(objective)/d(w_i) for every profile entry."""
    return _Pipeline(problem).value_and_gradient(profile.w)[1]


def check_gradient(problem: DesignProblem, profile: HeightProfile, probes: int = FD_PROBES,
                   step: float = FD_STEP, seed: int = 0) -> GradientReport:
    """
    Compare the analytic gradient with central differences on random probe
    entries drawn from the rings that at least one pixel samples.
    """
    pipeline = _Pipeline(problem)
    w = np.array(profile.w, dtype=np.float64)
    _, analytic = pipeline.value_and_gradient(w)

    rings = reachable_rings(problem.grid_size, problem.profile_length)
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(rings, size=min(probes, rings.size), replace=False))

    finite = np.zeros_like(analytic)
    for i in tqdm(chosen, desc="Finite differences", disable=not logger.isEnabledFor(logging.INFO)):
        plus, minus = w.copy(), w.copy()
        plus[i] += step
        minus[i] -= step
        finite[i] = (pipeline.value(plus) - pipeline.value(minus)) / (2.0 * step)

    floor = 1e-8 * max(float(np.abs(analytic).max()), np.finfo(float).tiny)
    a, fd = analytic[chosen], finite[chosen]
    errors = np.abs(a - fd) / np.maximum(np.maximum(np.abs(a), np.abs(fd)), floor)
    report = GradientReport(analytic, finite, float(errors.max()) if errors.size else 0.0,
                            [int(i) for i in chosen])
    logger.info(f"Gradient check on {len(chosen)} probes: max relative error {report.max_rel_error:.2e}")
    return report


def optimize(problem: DesignProblem, initial: Optional[HeightProfile] = None) -> OptimizationResult:
    """
    Projected descent on the profile heights.

    Each iteration scales the momentum-averaged gradient per coordinate by the
    running RMS of past gradients, projects onto [0, depth_max] and halves the
    step until the objective does not increase. A rejected iteration keeps the
    profile, clears the momentum and starts the next one from the smallest
    step tried.

    Args:
        problem: Objective, bounds and hyperparameters
        initial: Starting profile; a seeded random profile when omitted

    Returns:
        OptimizationResult with the per-iteration trajectory and profiles
    """
    if initial is None:
        initial = HeightProfile.random(problem.seed, problem.profile_length, problem.depth_max)
    if initial.length != problem.profile_length:
        raise ConfigurationError(f"Initial profile has {initial.length} entries, expected {problem.profile_length}")
    if initial.w.max() > problem.depth_max:
        raise ConfigurationError(f"Initial profile exceeds depth_max {problem.depth_max}")

    pipeline = _Pipeline(problem)
    w = np.array(initial.w, dtype=np.float64)
    current = pipeline.value(w)
    if not np.isfinite(current):
        raise ConfigurationError(f"Objective of the initial profile is not finite ({current})")

    trajectory = [TrajectoryRow(0, current, 0.0, True)]
    profiles = [w.copy()]
    first_moment = np.zeros_like(w)
    second_moment = np.zeros_like(w)
    base_step = problem.step_size
    t = 0

    iterations = tqdm(range(1, problem.iterations + 1), desc="Optimizing",
                      disable=not logger.isEnabledFor(logging.INFO))
    for it in iterations:
        _, grad = pipeline.value_and_gradient(w)
        t += 1
        first_moment = OPT_BETA1 * first_moment + (1.0 - OPT_BETA1) * grad
        second_moment = OPT_BETA2 * second_moment + (1.0 - OPT_BETA2) * grad ** 2
        m_hat = first_moment / (1.0 - OPT_BETA1 ** t)
        rms = np.sqrt(second_moment / (1.0 - OPT_BETA2 ** t))
        direction = np.divide(m_hat, rms, out=np.zeros_like(m_hat), where=rms > 0)

        step = base_step
        accepted = False
        for _ in range(OPT_MAX_BACKTRACKS):
            candidate = np.clip(w - step * direction, 0.0, problem.depth_max)
            value = pipeline.value(candidate)
            if np.isfinite(value) and value <= current:
                accepted = True
                break
            step *= 0.5

        if accepted:
            w, current = candidate, value
            base_step = min(2.0 * step, problem.step_size)
        else:
            first_moment[:] = 0.0
            base_step = step
            logger.debug(f"Iteration {it}: no decrease after {OPT_MAX_BACKTRACKS} halvings")

        trajectory.append(TrajectoryRow(it, current, step, accepted))
        profiles.append(w.copy())
        iterations.set_postfix(objective=f"{current:.4e}")

    depth = problem.depth_max if problem.iterations else initial.depth_max
    result = OptimizationResult(HeightProfile(w, depth), trajectory, profiles)
    logger.info(f"Objective {result.initial_objective:.6e} -> {result.final_objective:.6e} "
                f"after {problem.iterations} iteration(s)")

    if problem.quantize_levels:
        quantized = quantize_profile(result.profile, problem.quantize_levels, problem.depth_max)
        result.quantized_profile = quantized
        result.quantized_objective = pipeline.value(quantized.w)
        logger.info(f"Quantized to {problem.quantize_levels} levels: objective "
                    f"{result.final_objective:.6e} -> {result.quantized_objective:.6e}")
    return result


def design_psfs(problem: DesignProblem, profile: HeightProfile) -> PsfStack:
    """PSF stack the objective sees for a profile."""
    return _Pipeline(problem).psf_stack(profile.w)


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    problem = DesignProblem.desk(Objective.PSF_INCOHERENCE, iterations=10)
    start = HeightProfile.random(seed=0)
    report = check_gradient(problem, start, probes=4)
    print(f"Gradient check: {report.max_rel_error:.2e} on probes {report.probe_indices}")
    result = optimize(problem, start)
    print(f"Objective {result.initial_objective:.5f} -> {result.final_objective:.5f}")
