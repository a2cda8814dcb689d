"""Training loop: paired data in, trained velocity field out.

Each step draws a mini-batch of LR/HR pairs, a discrete time step and a
Gaussian base image per sample, regresses the network output onto the
displacement target, and applies an Adam (default) or plain SGD update.
All per-step randomness comes from a Philox substream keyed by
(seed, step), so runs are bitwise reproducible and a run resumed from a
checkpoint is identical to an uninterrupted one.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import flow_core
from .datagen import PairedSample, load_dataset
from .flow_core import FlowBatch, TimeGrid
from .metrics import default_data_range, psnr
from .model import (
    AdamState,
    ArchConfig,
    ModelParams,
    adam_step,
    init_adam_state,
    init_params,
    load_checkpoint,
    loss_and_grad,
    save_checkpoint,
    sgd_step,
)
from .rng import derive_seed, generator
from .sampler import euler_integrate

_TAG_STEP = 1
_TAG_VAL = 2
_TAG_INIT = 3

__all__ = [
    "TrainConfig",
    "TrainData",
    "TrainLog",
    "TrainingDiverged",
    "train",
    "resume",
    "write_train_log",
]


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the diagnostic context."""

    def __init__(self, step: int, lr: float, loss: float):
        self.step = step
        self.lr = lr
        self.loss = loss
        super().__init__(f"non-finite loss {loss} at step {step} (lr={lr})")


@dataclass(frozen=True)
class TrainConfig:
    max_steps: int
    T: int = 20
    lr: float = 1e-4
    batch_size: int = 8
    patch: int = 64
    seed: int = 0
    val_every: int = 500
    optimizer: str = "adam"  # or "sgd"
    flips: bool = True

    def validate(self) -> None:
        if self.max_steps < 0:
            raise ValueError(f"max_steps must be >= 0, got {self.max_steps}")
        if min(self.T, self.lr, self.batch_size, self.patch, self.val_every) <= 0:
            raise ValueError(f"T, lr, batch_size, patch, val_every must be positive: {self}")
        if self.patch % 2 != 0:
            raise ValueError(f"patch must be even, got {self.patch}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


@dataclass
class TrainData:
    """Training pairs plus the dataset normalization; optional val pairs."""

    samples: list[PairedSample]
    norm_mean: float
    norm_std: float
    val_samples: list[PairedSample] = field(default_factory=list)

    @classmethod
    def from_dirs(cls, train_dir: str | Path, val_dir: str | Path | None = None) -> "TrainData":
        samples, manifest = load_dataset(train_dir)
        val_samples = load_dataset(val_dir)[0] if val_dir else []
        return cls(
            samples=samples,
            norm_mean=manifest["norm"]["mean"],
            norm_std=manifest["norm"]["std"],
            val_samples=val_samples,
        )


@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    val_psnr: dict[int, float] = field(default_factory=dict)


def _make_batch(
    data: TrainData, cfg: TrainConfig, step: int
) -> list[FlowBatch]:
    rng = generator(cfg.seed, _TAG_STEP, step)
    n = len(data.samples)
    idx = rng.integers(0, n, size=cfg.batch_size)
    grid = TimeGrid(cfg.T)
    batch = []
    for i in idx:
        pair = data.samples[int(i)]
        h, w = pair.lr.shape
        if cfg.patch > min(h, w):
            raise ValueError(f"patch {cfg.patch} exceeds pair dims {h}x{w}")
        r = int(rng.integers(0, h - cfg.patch + 1))
        c = int(rng.integers(0, w - cfg.patch + 1))
        lr = pair.lr[r : r + cfg.patch, c : c + cfg.patch]
        hr = pair.hr[r : r + cfg.patch, c : c + cfg.patch]
        if cfg.flips:
            fl = rng.integers(0, 2, size=2)
            if fl[0]:
                lr, hr = lr[::-1], hr[::-1]
            if fl[1]:
                lr, hr = lr[:, ::-1], hr[:, ::-1]
        lr = ((lr.astype(np.float32) - data.norm_mean) / data.norm_std).astype(np.float32)
        hr = ((hr.astype(np.float32) - data.norm_mean) / data.norm_std).astype(np.float32)
        t = flow_core.draw_time(grid, rng)
        x0 = flow_core.draw_gaussian(lr.shape, rng)
        x_t = flow_core.interpolate(x0, hr, t)
        batch.append(FlowBatch(x0=x0, x_t=x_t, x_m0=lr, x_m1=hr, t=t))
    return batch


def _val_psnr(params: ModelParams, data: TrainData, cfg: TrainConfig, step: int) -> float:
    vals = []
    for i, pair in enumerate(data.val_samples):
        lr_norm = (pair.lr.astype(np.float32) - params.norm_mean) / params.norm_std
        pred = euler_integrate(
            params, lr_norm.astype(np.float32), cfg.T, derive_seed(cfg.seed, _TAG_VAL, step, i)
        )
        vals.append(psnr(pred, pair.hr, default_data_range(pair.hr)))
    return float(np.mean(vals))


def _run_loop(
    params: ModelParams,
    opt_state: AdamState | None,
    start_step: int,
    data: TrainData,
    cfg: TrainConfig,
    checkpoint_dir: str | Path | None,
    log: TrainLog,
) -> tuple[ModelParams, TrainLog]:
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    for step in range(start_step, cfg.max_steps):
        t0 = time.perf_counter()
        batch = _make_batch(data, cfg, step)
        loss, grads = loss_and_grad(params, batch)
        if not math.isfinite(loss):
            raise TrainingDiverged(step=step, lr=cfg.lr, loss=loss)
        if cfg.optimizer == "adam":
            params, opt_state = adam_step(params, grads, opt_state, cfg.lr)
        else:
            params = sgd_step(params, grads, cfg.lr)
        done = step + 1
        log.steps.append(done)
        log.losses.append(loss)
        log.wall_ms.append((time.perf_counter() - t0) * 1e3)
        if done % cfg.val_every == 0 or done == cfg.max_steps:
            if data.val_samples:
                log.val_psnr[done] = _val_psnr(params, data, cfg, done)
            if ckpt_dir is not None:
                save_checkpoint(ckpt_dir / f"ckpt_{done:06d}.ckpt", params, done, opt_state)
    if ckpt_dir is not None:
        save_checkpoint(ckpt_dir / "final.ckpt", params, cfg.max_steps, opt_state)
    return params, log


def train(
    data: TrainData,
    cfg: TrainConfig,
    arch: ArchConfig,
    checkpoint_dir: str | Path | None = None,
) -> tuple[ModelParams, TrainLog]:
    """Run the training loop from scratch for cfg.max_steps steps."""
    cfg.validate()
    arch.validate()
    if not data.samples:
        raise ValueError("training dataset is empty")
    params = init_params(arch, derive_seed(cfg.seed, _TAG_INIT))
    params.norm_mean = data.norm_mean
    params.norm_std = data.norm_std
    opt_state = init_adam_state(params) if cfg.optimizer == "adam" else None
    return _run_loop(params, opt_state, 0, data, cfg, checkpoint_dir, TrainLog())


def resume(
    checkpoint_path: str | Path,
    data: TrainData,
    cfg: TrainConfig,
    arch: ArchConfig | None = None,
    checkpoint_dir: str | Path | None = None,
) -> tuple[ModelParams, TrainLog]:
    """Continue training from a checkpoint up to cfg.max_steps total steps.

    Bitwise-equivalent to an uninterrupted run with the same seed. Refuses
    checkpoints whose architecture disagrees with ``arch`` (when given).
    """
    cfg.validate()
    params, step, opt_state = load_checkpoint(checkpoint_path)
    if arch is not None and params.arch != arch:
        raise ValueError(
            f"checkpoint arch {params.arch} does not match requested arch {arch}"
        )
    if cfg.optimizer == "adam" and opt_state is None:
        raise ValueError("checkpoint has no optimizer state; cannot resume with adam")
    if cfg.optimizer == "sgd":
        opt_state = None
    if step >= cfg.max_steps:
        return params, TrainLog()
    return _run_loop(params, opt_state, step, data, cfg, checkpoint_dir, TrainLog())


def write_train_log(path: str | Path, log: TrainLog) -> None:
    """CSV with one row per step: step, loss, wall_ms, val_psnr (if any)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss", "wall_ms", "val_psnr"])
        for step, loss, ms in zip(log.steps, log.losses, log.wall_ms):
            val = log.val_psnr.get(step, "")
            writer.writerow([step, repr(loss), f"{ms:.3f}", repr(val) if val != "" else ""])
