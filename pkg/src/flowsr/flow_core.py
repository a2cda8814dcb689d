"""Core flow-matching math: interpolant, path sampling, targets, loss.

The transport path between a Gaussian base draw x0 and a target image x1 is
the straight line x_t = (1-t) * x0 + t * x1, whose marginal at time t is
N(t * x1, (1-t)^2 I). The regression target for the velocity network is the
constant displacement x1 - x0, and training time steps live on the discrete
grid {i/T : i = 0..T}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import generator

__all__ = [
    "TimeGrid",
    "FlowBatch",
    "interpolate",
    "gaussian_image",
    "draw_gaussian",
    "sample_path",
    "target_velocity",
    "sample_time",
    "draw_time",
    "fm_loss",
]


@dataclass(frozen=True)
class TimeGrid:
    """Discrete time grid with T steps of size 1/T."""

    T: int

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")

    @property
    def delta(self) -> float:
        return 1.0 / self.T


@dataclass(frozen=True)
class FlowBatch:
    """One training tuple: base draw, interpolant, condition, target, time."""

    x0: np.ndarray
    x_t: np.ndarray
    x_m0: np.ndarray
    x_m1: np.ndarray
    t: float


def _check_shapes(*imgs: np.ndarray) -> None:
    shapes = {i.shape for i in imgs}
    if len(shapes) > 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def interpolate(x0: np.ndarray, x1: np.ndarray, t: float) -> np.ndarray:
    """Linear interpolant (1-t)*x0 + t*x1; exact projection at the endpoints."""
    _check_shapes(x0, x1)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    if t == 0.0:
        return x0.copy()
    if t == 1.0:
        return x1.copy()
    dt = x0.dtype
    return ((1.0 - t) * x0 + t * x1).astype(dt, copy=False)


def draw_gaussian(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Standard normal field drawn from an existing generator."""
    return rng.standard_normal(shape).astype(np.float32)


def gaussian_image(shape: tuple[int, ...], seed: int) -> np.ndarray:
    """Standard normal field, addressable by seed."""
    return draw_gaussian(shape, generator(seed))


def sample_path(x1: np.ndarray, t: float, rng_seed: int) -> np.ndarray:
    """Draw from the conditional path N(t*x1, (1-t)^2 I) at time t."""
    x0 = gaussian_image(x1.shape, rng_seed)
    return interpolate(x0, x1.astype(np.float32, copy=False), t)


def target_velocity(x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
    """Regression target for the velocity network: x1 - x0."""
    _check_shapes(x0, x1)
    return x1 - x0


def draw_time(grid: TimeGrid, rng: np.random.Generator) -> float:
    """Uniform draw over {0, 1/T, ..., 1} from an existing generator."""
    return int(rng.integers(0, grid.T + 1)) / grid.T


def sample_time(grid: TimeGrid, rng_seed: int) -> float:
    """Uniform draw over the discrete grid, addressable by seed."""
    return draw_time(grid, generator(rng_seed))


def fm_loss(v_pred: np.ndarray, x0: np.ndarray, x1: np.ndarray) -> float:
    """Mean squared error between the predicted and target velocity.

    The squared norm is averaged over pixels so the magnitude does not
    depend on patch size.
    """
    _check_shapes(v_pred, x0, x1)
    diff = v_pred - (x1 - x0)
    return float(np.mean(diff.astype(np.float64) ** 2))
