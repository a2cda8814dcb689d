"""Distortion metrics: PSNR, SSIM, MS-SSIM, RMSE.

SSIM follows the standard formulation: 11x11 Gaussian window with sigma 1.5
applied in 'valid' mode, C1=(0.01*range)^2, C2=(0.03*range)^2. MS-SSIM
combines the mean contrast-structure term of each scale (2x average-pooling
between scales) with the luminance term of the coarsest scale, all with
uniform exponents 1/scales. Everything is computed in double precision.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5

__all__ = ["psnr", "ssim", "ms_ssim", "rmse", "MetricRow", "evaluate_pairs", "write_metrics_csv"]


def _check(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")


def default_data_range(gt: np.ndarray) -> float:
    return float(gt.max() - gt.min())


def psnr(pred: np.ndarray, gt: np.ndarray, data_range: float) -> float:
    """10*log10(range^2 / MSE); +inf for identical images."""
    _check(pred, gt)
    if data_range <= 0:
        raise ValueError(f"data_range must be > 0, got {data_range}")
    mse = float(np.mean((pred.astype(np.float64) - gt.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range * data_range / mse)


def rmse(pred: np.ndarray, gt: np.ndarray) -> float:
    _check(pred, gt)
    return float(np.sqrt(np.mean((pred.astype(np.float64) - gt.astype(np.float64)) ** 2)))


def _gaussian_window(n: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _filter_valid(img: np.ndarray, w1d: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation with an outer-product window
    out = sliding_window_view(img, len(w1d), axis=0) @ w1d
    return sliding_window_view(out, len(w1d), axis=1) @ w1d


def _ssim_terms(pred: np.ndarray, gt: np.ndarray, data_range: float):
    """Luminance and contrast-structure terms (means and full maps)."""
    x = pred.astype(np.float64)
    y = gt.astype(np.float64)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    w = _gaussian_window()
    mx = _filter_valid(x, w)
    my = _filter_valid(y, w)
    mxx = _filter_valid(x * x, w)
    myy = _filter_valid(y * y, w)
    mxy = _filter_valid(x * y, w)
    vx = mxx - mx * mx
    vy = myy - my * my
    cov = mxy - mx * my
    lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1)
    cs = (2.0 * cov + c2) / (vx + vy + c2)
    return float(lum.mean()), float(cs.mean()), lum, cs


def ssim(pred: np.ndarray, gt: np.ndarray, data_range: float) -> float:
    """Mean of the SSIM map (luminance * contrast-structure per window)."""
    _check(pred, gt)
    if min(pred.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM, "
                         f"got {pred.shape}")
    if data_range <= 0:
        raise ValueError(f"data_range must be > 0, got {data_range}")
    _, _, lum, cs = _ssim_terms(pred, gt, data_range)
    return float((lum * cs).mean())


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    img = img[: h - h % 2, : w - w % 2]
    return 0.25 * (img[0::2, 0::2] + img[0::2, 1::2] + img[1::2, 0::2] + img[1::2, 1::2])


def ms_ssim(pred: np.ndarray, gt: np.ndarray, data_range: float, scales: int = 3) -> float:
    """Multi-scale SSIM with uniform exponents across scales."""
    _check(pred, gt)
    if scales < 1:
        raise ValueError(f"scales must be >= 1, got {scales}")
    min_size = SSIM_WINDOW * 2 ** (scales - 1)
    if min(pred.shape) < min_size:
        raise ValueError(
            f"images must be at least {min_size}x{min_size} for {scales} scales "
            f"(11x11 window per scale), got {pred.shape}"
        )
    x = pred.astype(np.float64)
    y = gt.astype(np.float64)
    weight = 1.0 / scales
    result = 1.0
    for s in range(scales):
        lum_mean, cs_mean, _, _ = _ssim_terms(x, y, data_range)
        result *= max(cs_mean, 0.0) ** weight
        if s == scales - 1:
            result *= max(lum_mean, 0.0) ** weight
        else:
            x = _downsample2(x)
            y = _downsample2(y)
    return float(result)


@dataclass(frozen=True)
class MetricRow:
    image_id: str
    psnr: float
    ssim: float
    ms_ssim: float
    rmse: float


def evaluate_pairs(
    pairs: list[tuple[str, np.ndarray, np.ndarray]],
    data_range: float | None = None,
    scales: int = 3,
) -> list[MetricRow]:
    """Per-image metrics for (image_id, pred, gt) triples.

    When data_range is None it defaults to max(gt) - min(gt) per image.
    """
    rows = []
    for image_id, pred, gt in pairs:
        dr = default_data_range(gt) if data_range is None else data_range
        rows.append(
            MetricRow(
                image_id=image_id,
                psnr=psnr(pred, gt, dr),
                ssim=ssim(pred, gt, dr),
                ms_ssim=ms_ssim(pred, gt, dr, scales=scales),
                rmse=rmse(pred, gt),
            )
        )
    return rows


def write_metrics_csv(path: str | Path, rows: list[MetricRow]) -> None:
    """Write per-image rows plus aggregate mean/std rows."""
    fields = ["psnr", "ssim", "ms_ssim", "rmse"]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["image_id"] + fields)
        for r in rows:
            writer.writerow([r.image_id] + [repr(getattr(r, k)) for k in fields])
        if rows:
            data = np.array([[getattr(r, k) for k in fields] for r in rows], dtype=np.float64)
            with np.errstate(invalid="ignore"):  # inf psnr rows propagate as flagged
                writer.writerow(["mean"] + [repr(float(v)) for v in data.mean(axis=0)])
                writer.writerow(["std"] + [repr(float(v)) for v in data.std(axis=0)])
