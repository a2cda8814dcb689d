"""Inference: Euler integration of the velocity field and posterior sampling.

A prediction is obtained by drawing x0 ~ N(0, I) and integrating
dx/dt = v(t, x, x_m0) from t=0 to t=1 with T explicit Euler steps, the field
being evaluated at the left endpoint of each step. Repeating from
independent base draws yields samples from the implicit posterior; their
pixel-wise mean is the MMSE estimate and their pixel-wise standard
deviation an uncertainty map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .flow_core import gaussian_image
from .model import ModelParams, forward
from .rng import derive_seeds

__all__ = [
    "IntegrationError",
    "PosteriorEnsemble",
    "integrate_field",
    "euler_integrate",
    "posterior_sample",
    "mmse",
]

VelocityFn = Callable[[float, np.ndarray], np.ndarray]


class IntegrationError(RuntimeError):
    """Non-finite state encountered during ODE integration."""

    def __init__(self, step: int, t: float):
        self.step = step
        self.t = t
        super().__init__(f"non-finite state at integration step {step} (t={t:.4f})")


@dataclass(frozen=True)
class PosteriorEnsemble:
    """K posterior samples with their pixel-wise mean and std (ddof=1)."""

    samples: np.ndarray  # (K, H, W)
    mean: np.ndarray
    pixel_std: np.ndarray | None  # None when K == 1
    K: int
    base_seeds: list[int]


def integrate_field(velocity: VelocityFn, x0: np.ndarray, T: int) -> np.ndarray:
    """Explicit Euler from t=0 to 1: x += (1/T) * v(i/T, x) for i = 0..T-1."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    delta = 1.0 / T
    x = x0.copy()
    for i in range(T):
        x = x + delta * velocity(delta * i, x)
        if not np.all(np.isfinite(x)):
            raise IntegrationError(step=i + 1, t=delta * (i + 1))
    return x


def euler_integrate(model, x_m0: np.ndarray, T: int, base_seed: int) -> np.ndarray:
    """One posterior sample conditioned on x_m0.

    ``model`` is either trained ModelParams (x_m0 must already be normalized
    with the model's constants; the result is de-normalized) or a plain
    callable v(t, x, x_m0), in which case intensities pass through raw.
    """
    x0 = gaussian_image(x_m0.shape, base_seed)
    if callable(model):
        out = integrate_field(lambda t, x: model(t, x, x_m0), x0, T)
    elif isinstance(model, ModelParams):
        out = integrate_field(lambda t, x: forward(model, t, x, x_m0), x0, T)
        out = out * model.norm_std + model.norm_mean
    else:
        raise TypeError(f"model must be ModelParams or callable, got {type(model)}")
    return out.astype(np.float32, copy=False)


def posterior_sample(model, x_m0: np.ndarray, T: int, K: int, seed: int) -> PosteriorEnsemble:
    """K independent integrations with sub-seeds derived from ``seed``."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    base_seeds = derive_seeds(seed, K)
    samples = np.stack([euler_integrate(model, x_m0, T, s) for s in base_seeds])
    mean = samples.mean(axis=0, dtype=np.float64).astype(np.float32)
    pixel_std = None
    if K >= 2:
        pixel_std = samples.std(axis=0, ddof=1, dtype=np.float64).astype(np.float32)
    return PosteriorEnsemble(
        samples=samples, mean=mean, pixel_std=pixel_std, K=K, base_seeds=base_seeds
    )


def mmse(ensemble: PosteriorEnsemble) -> np.ndarray:
    """Pixel-wise average of the posterior samples."""
    return ensemble.mean
