"""Run configuration: one strict JSON document per pipeline.

Unknown keys are rejected with the offending path, all seeds are explicit,
and every file path is resolved relative to the config file's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .datagen import KINDS, DegradationSpec
from .model import ArchConfig
from .trainer import TrainConfig

__all__ = ["ConfigError", "RunConfig", "load_config"]

_REQUIRED = object()


class ConfigError(ValueError):
    """Configuration file violates the schema."""


def _take(d: dict, key: str, kind, where: str, default=_REQUIRED):
    if key not in d:
        if default is _REQUIRED:
            raise ConfigError(f"{where}: missing required key '{key}'")
        return default
    val = d.pop(key)
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    wrong_type = not isinstance(val, kind)
    bool_mismatch = isinstance(val, bool) and kind is not bool
    if wrong_type or bool_mismatch:
        raise ConfigError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, "
                          f"got {type(val).__name__}")
    return val


def _done(d: dict, where: str) -> None:
    if d:
        raise ConfigError(f"{where}: unknown keys {sorted(d)}")


def _path(base: Path, rel: str) -> Path:
    return (base / rel).resolve() if not Path(rel).is_absolute() else Path(rel)


@dataclass
class DatagenSection:
    kind: str
    patch: int
    n_train: int
    n_val: int
    n_test: int
    lr_spec: DegradationSpec
    hr_spec: DegradationSpec
    out_dir: Path


@dataclass
class InferSection:
    T: int
    tile: int
    core: int
    checkpoint: Path
    inputs: Path
    out_dir: Path
    png: bool = False
    K: int = 1  # used by the sample command only


@dataclass
class EvalSection:
    pred_dir: Path
    gt_dir: Path
    out_csv: Path
    data_range: float | None
    scales: int


@dataclass
class CalibrateSection:
    ensembles_dir: Path
    gt_dir: Path
    out_csv: Path


@dataclass
class RunConfig:
    seed: int
    threads: int = 1
    datagen: DatagenSection | None = None
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig | None = None
    train_data_dir: Path | None = None
    train_val_dir: Path | None = None
    train_out_dir: Path | None = None
    infer: InferSection | None = None
    sample: InferSection | None = None
    eval: EvalSection | None = None
    calibrate: CalibrateSection | None = None


def _parse_spec(d: dict, where: str) -> DegradationSpec:
    spec = DegradationSpec(
        psf_sigma=_take(d, "psf_sigma", float, where),
        gain=_take(d, "gain", float, where),
        read_sigma=_take(d, "read_sigma", float, where, default=0.0),
    )
    _done(d, where)
    try:
        spec.validate()
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from e
    return spec


def _parse_datagen(d: dict, base: Path) -> DatagenSection:
    where = "datagen"
    kind = _take(d, "kind", str, where, default="filaments")
    if kind not in KINDS:
        raise ConfigError(f"{where}.kind: must be one of {KINDS}, got {kind!r}")
    sec = DatagenSection(
        kind=kind,
        patch=_take(d, "patch", int, where, default=64),
        n_train=_take(d, "n_train", int, where),
        n_val=_take(d, "n_val", int, where, default=0),
        n_test=_take(d, "n_test", int, where, default=0),
        lr_spec=_parse_spec(_take(d, "lr_spec", dict, where), where + ".lr_spec"),
        hr_spec=_parse_spec(_take(d, "hr_spec", dict, where), where + ".hr_spec"),
        out_dir=_path(base, _take(d, "out_dir", str, where)),
    )
    _done(d, where)
    return sec


def _parse_arch(d: dict) -> ArchConfig:
    where = "arch"
    arch = ArchConfig(
        base_channels=_take(d, "base_channels", int, where, default=32),
        n_res_blocks=_take(d, "n_res_blocks", int, where, default=4),
        kernel_size=_take(d, "kernel_size", int, where, default=3),
        time_embed_dim=_take(d, "time_embed_dim", int, where, default=64),
    )
    _done(d, where)
    try:
        arch.validate()
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from e
    return arch


def _parse_infer(d: dict, base: Path, where: str, default_k: int = 1) -> InferSection:
    sec = InferSection(
        T=_take(d, "T", int, where, default=20),
        tile=_take(d, "tile", int, where, default=128),
        core=_take(d, "core", int, where, default=64),
        checkpoint=_path(base, _take(d, "checkpoint", str, where)),
        inputs=_path(base, _take(d, "inputs", str, where)),
        out_dir=_path(base, _take(d, "out_dir", str, where)),
        png=_take(d, "png", bool, where, default=False),
        K=_take(d, "K", int, where, default=default_k),
    )
    _done(d, where)
    return sec


def load_config(path: str | Path, seed_override: int | None = None,
                threads_override: int | None = None) -> RunConfig:
    """Load and validate a pipeline config; paths resolve relative to it."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    base = path.parent.resolve()

    cfg = RunConfig(
        seed=_take(raw, "seed", int, "config"),
        threads=_take(raw, "threads", int, "config", default=1),
    )
    if seed_override is not None:
        cfg.seed = seed_override
    if threads_override is not None:
        cfg.threads = threads_override
    if cfg.threads < 1:
        raise ConfigError(f"config.threads: must be >= 1, got {cfg.threads}")

    if "datagen" in raw:
        cfg.datagen = _parse_datagen(_take(raw, "datagen", dict, "config"), base)
    if "arch" in raw:
        cfg.arch = _parse_arch(_take(raw, "arch", dict, "config"))
    if "train" in raw:
        d = _take(raw, "train", dict, "config")
        where = "train"
        cfg.train_data_dir = _path(base, _take(d, "data_dir", str, where))
        val_dir = _take(d, "val_dir", str, where, default=None)
        cfg.train_val_dir = _path(base, val_dir) if val_dir else None
        cfg.train_out_dir = _path(base, _take(d, "out_dir", str, where))
        cfg.train = TrainConfig(
            max_steps=_take(d, "max_steps", int, where),
            T=_take(d, "T", int, where, default=20),
            lr=_take(d, "lr", float, where, default=1e-4),
            batch_size=_take(d, "batch_size", int, where, default=8),
            patch=_take(d, "patch", int, where, default=64),
            seed=cfg.seed,
            val_every=_take(d, "val_every", int, where, default=500),
            optimizer=_take(d, "optimizer", str, where, default="adam"),
            flips=_take(d, "flips", bool, where, default=True),
        )
        _done(d, where)
        try:
            cfg.train.validate()
        except ValueError as e:
            raise ConfigError(f"{where}: {e}") from e
    if "infer" in raw:
        cfg.infer = _parse_infer(_take(raw, "infer", dict, "config"), base, "infer")
    if "sample" in raw:
        cfg.sample = _parse_infer(_take(raw, "sample", dict, "config"), base, "sample",
                                  default_k=50)
    if "eval" in raw:
        d = _take(raw, "eval", dict, "config")
        where = "eval"
        dr = d.pop("data_range", None)
        if dr is not None and not isinstance(dr, (int, float)):
            raise ConfigError(f"{where}.data_range: expected number or null")
        cfg.eval = EvalSection(
            pred_dir=_path(base, _take(d, "pred_dir", str, where)),
            gt_dir=_path(base, _take(d, "gt_dir", str, where)),
            out_csv=_path(base, _take(d, "out_csv", str, where)),
            data_range=float(dr) if dr is not None else None,
            scales=_take(d, "scales", int, where, default=3),
        )
        _done(d, where)
    if "calibrate" in raw:
        d = _take(raw, "calibrate", dict, "config")
        where = "calibrate"
        cfg.calibrate = CalibrateSection(
            ensembles_dir=_path(base, _take(d, "ensembles_dir", str, where)),
            gt_dir=_path(base, _take(d, "gt_dir", str, where)),
            out_csv=_path(base, _take(d, "out_csv", str, where)),
        )
        _done(d, where)
    _done(raw, "config")
    return cfg
