"""
Report-only validation of spectral cubes.
"""

from dataclasses import dataclass, field
from typing import List

import numpy as np

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from datamodel.types import SpectralCube

MAX_LISTED_VIOLATIONS = 100


@dataclass
class ValidationReport:
    violations: List[str] = field(default_factory=list)
    nan_count: int = 0
    inf_count: int = 0
    negative_count: int = 0
    shape_ok: bool = True

    @property
    def ok(self) -> bool:
        return not self.violations and self.shape_ok

    def summary(self) -> str:
        if self.ok:
            return "ok"
        return (f"{len(self.violations)} violation(s): nan={self.nan_count}, "
                f"inf={self.inf_count}, negative={self.negative_count}")


def validate_cube(cube: SpectralCube) -> ValidationReport:
    """
    Count NaN, Inf and negative voxels and check dimensions against the grid.

    Never raises and never mutates the cube. The violation list names the
    (row, col, band) of each offending voxel, capped at MAX_LISTED_VIOLATIONS
    entries; the counts are always exact.
    """
    report = ValidationReport()
    data = cube.data

    if data.ndim != 3 or data.shape[2] != cube.grid.count:
        report.shape_ok = False
        report.violations.append(
            f"shape {data.shape} inconsistent with {cube.grid.count} bands"
        )
        return report

    nan_mask = np.isnan(data)
    inf_mask = np.isinf(data)
    with np.errstate(invalid="ignore"):
        neg_mask = data < 0

    report.nan_count = int(nan_mask.sum())
    report.inf_count = int(inf_mask.sum())
    report.negative_count = int(neg_mask.sum())

    for label, mask in (("NaN", nan_mask), ("Inf", inf_mask), ("negative", neg_mask)):
        for row, col, band in np.argwhere(mask):
            if len(report.violations) >= MAX_LISTED_VIOLATIONS:
                break
            report.violations.append(
                f"{label} at (row={row}, col={col}, band={band}) = {data[row, col, band]}"
            )

    return report


if __name__ == "__main__":
    cube = SpectralCube.zeros(4, 4)
    print(validate_cube(cube).summary())

    bad = np.zeros((4, 4, 31))
    bad[0, 0, 5] = np.nan
    bad[1, 2, 3] = -0.1
    report = validate_cube(SpectralCube(bad))
    print(report.summary())
    for line in report.violations:
        print(f"  {line}")
