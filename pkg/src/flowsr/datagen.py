"""Synthetic micrograph generation with an explicit degradation forward model.

Ground-truth structures (filaments, pits, curves) are rendered procedurally,
then observed through a Gaussian point-spread function followed by
Poisson-Gaussian noise, the standard fluorescence sensor model. A paired
low-resolution / high-resolution sample shares one underlying structure and
one pixel grid; the resolution difference is carried entirely by the PSF
width and the noise level.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .fileio import read_f32img, write_f32img
from .rng import derive_seed, generator

KINDS = ("filaments", "pits", "curves")
MIN_DIM = 32

__all__ = [
    "Structure",
    "DegradationSpec",
    "PairedSample",
    "gen_structure",
    "gaussian_blur",
    "degrade",
    "make_dataset",
    "norm_constants",
    "save_dataset",
    "load_dataset",
]


@dataclass(frozen=True)
class DegradationSpec:
    """Forward-model parameters: Gaussian PSF plus Poisson-Gaussian noise.

    gain is expressed as photons per intensity unit: the shot-noise draw is
    Poisson(gain * signal) / gain, so larger gain means cleaner images.
    """

    psf_sigma: float
    gain: float
    read_sigma: float = 0.0

    def validate(self) -> None:
        if not (math.isfinite(self.psf_sigma) and self.psf_sigma > 0):
            raise ValueError(f"psf_sigma must be finite and > 0, got {self.psf_sigma}")
        if not (math.isfinite(self.gain) and self.gain > 0):
            raise ValueError(f"gain must be finite and > 0, got {self.gain}")
        if not (math.isfinite(self.read_sigma) and self.read_sigma >= 0):
            raise ValueError(f"read_sigma must be finite and >= 0, got {self.read_sigma}")


@dataclass(frozen=True)
class Structure:
    """A rendered ground-truth scene: non-negative, peak-normalized to 1."""

    pixels: np.ndarray
    kind: str
    seed: int


@dataclass(frozen=True)
class PairedSample:
    """One LR/HR observation pair of the same structure, same pixel grid."""

    lr: np.ndarray
    hr: np.ndarray
    structure_seed: int


def _segment_distance(py: np.ndarray, px: np.ndarray, a, b) -> np.ndarray:
    """Euclidean distance from every pixel center to the segment a-b."""
    ay, ax = a
    by, bx = b
    dy, dx = by - ay, bx - ax
    denom = dy * dy + dx * dx
    if denom == 0.0:
        return np.hypot(py - ay, px - ax)
    t = np.clip(((py - ay) * dy + (px - ax) * dx) / denom, 0.0, 1.0)
    return np.hypot(py - (ay + t * dy), px - (ax + t * dx))


def _render_polylines(h: int, w: int, polylines, widths, intensities) -> np.ndarray:
    """Accumulate anti-aliased line intensity via a Gaussian tube profile."""
    py, px = np.mgrid[0:h, 0:w].astype(np.float64)
    canvas = np.zeros((h, w), dtype=np.float64)
    for pts, lw, amp in zip(polylines, widths, intensities):
        for a, b in zip(pts[:-1], pts[1:]):
            d = _segment_distance(py, px, a, b)
            canvas += amp * np.exp(-0.5 * (d / lw) ** 2)
    return canvas


def _chaikin(points: np.ndarray, iterations: int = 4) -> np.ndarray:
    """Corner-cutting smoothing of an open polyline."""
    pts = points
    for _ in range(iterations):
        q = 0.75 * pts[:-1] + 0.25 * pts[1:]
        r = 0.25 * pts[:-1] + 0.75 * pts[1:]
        mid = np.empty((2 * len(pts) - 2, 2), dtype=np.float64)
        mid[0::2] = q
        mid[1::2] = r
        pts = np.concatenate([pts[:1], mid, pts[-1:]])
    return pts


def gen_structure(kind: str, height: int, width: int, seed: int) -> Structure:
    """Render a ground-truth structure, deterministic in (kind, dims, seed)."""
    if kind not in KINDS:
        raise ValueError(f"unknown structure kind {kind!r}, expected one of {KINDS}")
    if height < MIN_DIM or width < MIN_DIM:
        raise ValueError(f"dimensions must be >= {MIN_DIM}x{MIN_DIM}, got {height}x{width}")

    rng = generator(seed, KINDS.index(kind))
    scale = min(height, width)

    if kind == "filaments":
        n = int(rng.integers(4, 13))
        polylines, widths, amps = [], [], []
        for i in range(n):
            # keep the first filament on-canvas so the scene is never empty
            lo, hi = (0.2, 0.8) if i == 0 else (-0.1, 1.1)
            start = np.array([rng.uniform(lo, hi) * height, rng.uniform(lo, hi) * width])
            angle = rng.uniform(0.0, 2.0 * math.pi)
            pts = [start]
            for _ in range(int(rng.integers(1, 4))):
                length = rng.uniform(0.25, 0.6) * scale
                pts.append(pts[-1] + length * np.array([math.sin(angle), math.cos(angle)]))
                angle += rng.uniform(-0.6, 0.6)
            polylines.append(np.array(pts))
            widths.append(rng.uniform(0.6, 1.3))
            amps.append(rng.uniform(0.4, 1.0))
        canvas = _render_polylines(height, width, polylines, widths, amps)

    elif kind == "pits":
        n = int(rng.integers(8, 25))
        py, px = np.mgrid[0:height, 0:width].astype(np.float64)
        canvas = np.zeros((height, width), dtype=np.float64)
        for _ in range(n):
            cy = rng.uniform(2.0, height - 2.0)
            cx = rng.uniform(2.0, width - 2.0)
            r0 = rng.uniform(1.5, 4.5)
            ring_w = rng.uniform(0.6, 1.1)
            amp = rng.uniform(0.4, 1.0)
            r = np.hypot(py - cy, px - cx)
            canvas += amp * np.exp(-0.5 * ((r - r0) / ring_w) ** 2)

    else:  # curves
        n = int(rng.integers(3, 8))
        polylines, widths, amps = [], [], []
        for _ in range(n):
            ctrl = np.column_stack(
                [rng.uniform(0.05, 0.95, size=6) * height, rng.uniform(0.05, 0.95, size=6) * width]
            )
            polylines.append(_chaikin(ctrl))
            widths.append(rng.uniform(0.8, 1.6))
            amps.append(rng.uniform(0.4, 1.0))
        canvas = _render_polylines(height, width, polylines, widths, amps)

    peak = canvas.max()
    if peak <= 0.0:
        raise RuntimeError("structure rendered empty; generator bug")
    return Structure(pixels=(canvas / peak).astype(np.float32), kind=kind, seed=int(seed))


def _gaussian_kernel1d(sigma: float) -> np.ndarray:
    radius = math.ceil(4.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel truncated at radius ceil(4*sigma).

    Boundaries are mirrored (symmetric padding) so no dark halo leaks in
    from outside the field of view.
    """
    k = _gaussian_kernel1d(sigma)
    r = (len(k) - 1) // 2
    img = np.asarray(image, dtype=np.float64)
    padded = np.pad(img, ((r, r), (0, 0)), mode="symmetric")
    cols = np.lib.stride_tricks.sliding_window_view(padded, len(k), axis=0)
    img = cols @ k
    padded = np.pad(img, ((0, 0), (r, r)), mode="symmetric")
    rows = np.lib.stride_tricks.sliding_window_view(padded, len(k), axis=1)
    return rows @ k


def degrade(s: Structure, spec: DegradationSpec, noise_seed: int) -> np.ndarray:
    """Observe a structure through blur + signal-dependent noise.

    Per pixel: Poisson(gain * blurred) / gain, then additive Gaussian read
    noise with std read_sigma. Deterministic for a fixed noise_seed.
    """
    spec.validate()
    blurred = gaussian_blur(s.pixels, spec.psf_sigma)
    rng = generator(noise_seed)
    lam = np.clip(blurred * spec.gain, 0.0, None)
    shot = rng.poisson(lam).astype(np.float64) / spec.gain
    out = shot + rng.normal(0.0, spec.read_sigma, size=blurred.shape)
    return out.astype(np.float32)


def make_dataset(
    n_pairs: int,
    lr_spec: DegradationSpec,
    hr_spec: DegradationSpec,
    patch: int,
    seed: int,
    kind: str = "filaments",
) -> list[PairedSample]:
    """Generate paired LR/HR patches cropped on a regular grid.

    Each canvas-sized structure is degraded twice (independent noise) and
    cut into patch x patch crops; LR/HR crops of a pair cover the same
    region of the same structure.
    """
    lr_spec.validate()
    hr_spec.validate()
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if hr_spec.psf_sigma >= lr_spec.psf_sigma:
        raise ValueError(
            f"HR must be sharper than LR: hr psf_sigma {hr_spec.psf_sigma} "
            f">= lr psf_sigma {lr_spec.psf_sigma}"
        )
    canvas = max(2 * patch, MIN_DIM)
    if patch > canvas:
        raise ValueError(f"patch {patch} exceeds structure dims {canvas}")

    origins = [(r, c) for r in range(0, canvas - patch + 1, patch)
               for c in range(0, canvas - patch + 1, patch)]
    samples: list[PairedSample] = []
    s_idx = 0
    while len(samples) < n_pairs:
        struct_seed = derive_seed(seed, 0, s_idx)
        s = gen_structure(kind, canvas, canvas, struct_seed)
        lr_full = degrade(s, lr_spec, derive_seed(seed, 1, s_idx))
        hr_full = degrade(s, hr_spec, derive_seed(seed, 2, s_idx))
        for r, c in origins:
            if len(samples) == n_pairs:
                break
            samples.append(
                PairedSample(
                    lr=lr_full[r : r + patch, c : c + patch].copy(),
                    hr=hr_full[r : r + patch, c : c + patch].copy(),
                    structure_seed=struct_seed,
                )
            )
        s_idx += 1
    return samples


def norm_constants(samples: list[PairedSample]) -> tuple[float, float]:
    """Dataset-level affine normalization constants over all LR+HR pixels."""
    stacked = np.concatenate([np.stack([p.lr for p in samples]), np.stack([p.hr for p in samples])])
    mean = float(stacked.mean(dtype=np.float64))
    std = float(stacked.std(dtype=np.float64))
    if std <= 0.0:
        raise ValueError("dataset is constant; cannot normalize")
    return mean, std


def save_dataset(
    dir_path: str | Path,
    samples: list[PairedSample],
    *,
    lr_spec: DegradationSpec,
    hr_spec: DegradationSpec,
    patch: int,
    seed: int,
    kind: str,
    norm: tuple[float, float] | None = None,
) -> None:
    """Persist pairs as .f32img files plus a manifest.json."""
    root = Path(dir_path)
    (root / "pairs").mkdir(parents=True, exist_ok=True)
    for i, p in enumerate(samples):
        write_f32img(root / "pairs" / f"{i:04d}_lr.f32img", p.lr)
        write_f32img(root / "pairs" / f"{i:04d}_hr.f32img", p.hr)
    if norm is None:
        norm = norm_constants(samples)
    manifest = {
        "format": "flowsr-dataset",
        "version": 1,
        "n_pairs": len(samples),
        "patch": patch,
        "kind": kind,
        "seed": seed,
        "lr_spec": asdict(lr_spec),
        "hr_spec": asdict(hr_spec),
        "norm": {"mean": norm[0], "std": norm[1]},
        "structure_seeds": [p.structure_seed for p in samples],
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_dataset(dir_path: str | Path) -> tuple[list[PairedSample], dict]:
    """Load a dataset directory written by save_dataset."""
    root = Path(dir_path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {root}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "flowsr-dataset":
        raise ValueError(f"{manifest_path}: not a flowsr dataset manifest")
    n = manifest["n_pairs"]
    seeds = manifest.get("structure_seeds", [0] * n)
    samples = []
    for i in range(n):
        lr = read_f32img(root / "pairs" / f"{i:04d}_lr.f32img")
        hr = read_f32img(root / "pairs" / f"{i:04d}_hr.f32img")
        samples.append(PairedSample(lr=lr, hr=hr, structure_seed=seeds[i]))
    return samples, manifest
