"""
Image and spectrum quality metrics: PSNR, SSIM, MSE and spectral cosine fidelity.
"""

import json
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Union

import numpy as np
from skimage.metrics import structural_similarity

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import PSNR_CAP_DB, SSIM_SIGMA, SSIM_K1, SSIM_K2
from datamodel.errors import ConfigurationError, DomainError, ShapeError
from datamodel.types import SpectralCube

ArrayOrCube = Union[np.ndarray, SpectralCube]


def _values(x: ArrayOrCube) -> np.ndarray:
    return x.data if isinstance(x, SpectralCube) else np.asarray(x, dtype=np.float64)


def _same_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeError(f"Shape mismatch: {a.shape} vs {b.shape}")


def mse(a: ArrayOrCube, b: ArrayOrCube) -> float:
    a, b = _values(a), _values(b)
    _same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a: ArrayOrCube, b: ArrayOrCube, peak: Optional[float] = None) -> float:
    """
    10 log10(peak^2 / MSE) over all voxels, capped at PSNR_CAP_DB.

    peak defaults to the maximum of the first (ground-truth) argument.
    """
    a, b = _values(a), _values(b)
    _same_shape(a, b)
    if peak is None:
        peak = float(a.max())
    if peak <= 0:
        raise ConfigurationError(f"PSNR peak must be positive, got {peak}")
    err = float(np.mean((a - b) ** 2))
    if err == 0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(peak ** 2 / err), PSNR_CAP_DB))


def ssim(a: np.ndarray, b: np.ndarray, peak: Optional[float] = None) -> float:
    """Mean local SSIM, 11 x 11 Gaussian window with sigma 1.5, K1 = 0.01, K2 = 0.03."""
    a, b = _values(a), _values(b)
    _same_shape(a, b)
    if a.ndim != 2:
        raise ShapeError(f"ssim expects 2-D images, got {a.shape}")
    if peak is None:
        peak = float(max(a.max() - a.min(), 1e-12))
    try:
        return float(structural_similarity(
            a, b,
            data_range=peak,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
            K1=SSIM_K1,
            K2=SSIM_K2,
        ))
    except ValueError as e:
        raise ShapeError(f"Image too small for the SSIM window: {e}")


def cube_ssim(a: ArrayOrCube, b: ArrayOrCube, peak: Optional[float] = None) -> float:
    """Mean of per-band SSIM."""
    a, b = _values(a), _values(b)
    _same_shape(a, b)
    if peak is None:
        peak = float(max(a.max() - a.min(), 1e-12))
    return float(np.mean([ssim(a[:, :, i], b[:, :, i], peak) for i in range(a.shape[2])]))


def per_band_psnr(a: ArrayOrCube, b: ArrayOrCube, peak: Optional[float] = None) -> List[float]:
    a, b = _values(a), _values(b)
    _same_shape(a, b)
    peak = float(a.max()) if peak is None else peak
    return [psnr(a[:, :, i], b[:, :, i], peak) for i in range(a.shape[2])]


def spectral_fidelity(a, b) -> float:
    """Cosine similarity of two spectra in percent, clipped to [0, 100]."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    _same_shape(a, b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DomainError("Spectral fidelity is undefined for a zero spectrum")
    cosine = float(np.dot(a, b) / (na * nb))
    return float(np.clip(100.0 * cosine, 0.0, 100.0))


def spectral_mse(a, b) -> float:
    """MSE between two spectral curves."""
    return mse(np.asarray(a, dtype=np.float64).ravel(), np.asarray(b, dtype=np.float64).ravel())


def mean_pixel_fidelity(a: ArrayOrCube, b: ArrayOrCube) -> float:
    """Average spectral fidelity over pixels whose spectra are nonzero in both cubes."""
    a, b = _values(a), _values(b)
    _same_shape(a, b)
    fa = a.reshape(-1, a.shape[-1])
    fb = b.reshape(-1, b.shape[-1])
    na = np.linalg.norm(fa, axis=1)
    nb = np.linalg.norm(fb, axis=1)
    valid = (na > 0) & (nb > 0)
    if not np.any(valid):
        return 0.0
    cosine = (fa[valid] * fb[valid]).sum(axis=1) / (na[valid] * nb[valid])
    return float(np.mean(np.clip(100.0 * cosine, 0.0, 100.0)))


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    mse: float
    fidelity_percent: float
    per_band_psnr: List[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def to_table(self, color: Optional[bool] = None) -> str:
        """Plain-text table; bold header only on a TTY without NO_COLOR."""
        if color is None:
            color = sys.stdout.isatty() and "NO_COLOR" not in os.environ
        bold, reset = ("\033[1m", "\033[0m") if color else ("", "")
        rows = [
            f"{bold}{'metric':<18}{'value':>12}{reset}",
            f"{'PSNR (dB)':<18}{self.psnr:>12.3f}",
            f"{'SSIM':<18}{self.ssim:>12.4f}",
            f"{'MSE':<18}{self.mse:>12.4e}",
            f"{'fidelity (%)':<18}{self.fidelity_percent:>12.2f}",
        ]
        for i, value in enumerate(self.per_band_psnr):
            rows.append(f"{f'PSNR band {i}':<18}{value:>12.3f}")
        return "\n".join(rows)


def evaluate(reference: ArrayOrCube, estimate: ArrayOrCube, peak: Optional[float] = None) -> MetricReport:
    """
    Full report for a reconstruction against its ground truth.

    peak defaults to the reference maximum (whole-cube PSNR).
    """
    a, b = _values(reference), _values(estimate)
    _same_shape(a, b)
    if peak is None:
        peak = float(a.max()) if a.max() > 0 else 1.0
    return MetricReport(
        psnr=psnr(a, b, peak),
        ssim=cube_ssim(a, b, peak),
        mse=mse(a, b),
        fidelity_percent=mean_pixel_fidelity(a, b),
        per_band_psnr=per_band_psnr(a, b, peak),
    )


if __name__ == "__main__":
    rng = np.random.default_rng(0)
    truth = rng.random((32, 32, 8))
    noisy = truth + 0.01 * rng.standard_normal(truth.shape)
    print(evaluate(truth, noisy).to_table())
