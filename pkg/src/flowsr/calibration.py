"""Uncertainty calibration: RMV vs RMSE linear fit and reliability export.

For each evaluated image the ensemble's root mean variance (sqrt of the
mean per-pixel variance) is paired with the RMSE of its MMSE prediction
against ground truth. A least-squares line rmse ~ alpha * rmv + beta maps
the model's self-reported uncertainty onto its actual error scale; after
calibration the points should hug the identity line.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sampler import PosteriorEnsemble

__all__ = [
    "CalibrationPoint",
    "CalibrationFit",
    "rmv",
    "fit_linear",
    "reliability_export",
    "read_reliability",
]

SUMMARY_ID = "summary"


@dataclass(frozen=True)
class CalibrationPoint:
    image_id: str
    rmv: float
    rmse: float


@dataclass(frozen=True)
class CalibrationFit:
    alpha: float
    beta: float
    r2: float
    points: list[CalibrationPoint]


def rmv(ensemble: PosteriorEnsemble) -> float:
    """Root mean variance: sqrt(mean over pixels of the ensemble variance)."""
    if ensemble.K < 2 or ensemble.pixel_std is None:
        raise ValueError(f"rmv needs K >= 2 samples, got K={ensemble.K}")
    return float(np.sqrt(np.mean(ensemble.pixel_std.astype(np.float64) ** 2)))


def fit_linear(points: list[CalibrationPoint]) -> CalibrationFit:
    """Closed-form least squares of rmse against rmv."""
    if len(points) < 2:
        raise ValueError(f"need at least 2 points, got {len(points)}")
    x = np.array([p.rmv for p in points], dtype=np.float64)
    y = np.array([p.rmse for p in points], dtype=np.float64)
    vx = x - x.mean()
    sxx = float(vx @ vx)
    if sxx == 0.0:
        raise ValueError("all rmv values are identical; slope is undefined")
    alpha = float(vx @ (y - y.mean())) / sxx
    beta = float(y.mean() - alpha * x.mean())
    resid = y - (alpha * x + beta)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float((resid**2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return CalibrationFit(alpha=alpha, beta=beta, r2=r2, points=list(points))


def reliability_export(fit: CalibrationFit, path: str | Path) -> None:
    """CSV of per-image points plus a trailing summary row (alpha, beta, r2).

    Columns: image_id, rmv, rmse, rmv_calibrated where rmv_calibrated is
    alpha * rmv + beta.
    """
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["image_id", "rmv", "rmse", "rmv_calibrated"])
        for p in fit.points:
            writer.writerow(
                [p.image_id, repr(p.rmv), repr(p.rmse), repr(fit.alpha * p.rmv + fit.beta)]
            )
        writer.writerow([SUMMARY_ID, repr(fit.alpha), repr(fit.beta), repr(fit.r2)])


def read_reliability(path: str | Path) -> CalibrationFit:
    """Parse a file written by reliability_export."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[:2] != ["image_id", "rmv"]:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = list(reader)
    if not rows or rows[-1][0] != SUMMARY_ID:
        raise ValueError(f"{path}: missing summary row")
    alpha, beta, r2 = (float(v) for v in rows[-1][1:4])
    points = [CalibrationPoint(r[0], float(r[1]), float(r[2])) for r in rows[:-1]]
    return CalibrationFit(alpha=alpha, beta=beta, r2=r2, points=points)
