"""Command-line pipelines: gen-data, train, infer, sample, eval, calibrate.

Every command is a pure function of (config file, input files): all seeds
are explicit, outputs are rewritten from scratch, and repeated invocations
produce bit-identical artifacts. Tile and ensemble computations are
independent, so the optional thread pool changes wall time only.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import calibration as cal
from . import datagen, metrics, trainer
from .config import ConfigError, InferSection, RunConfig, load_config
from .fileio import read_f32img, write_f32img, write_png16
from .model import ModelParams, load_checkpoint
from .rng import derive_seed, derive_seeds
from .sampler import euler_integrate
from .tiling import plan_tiles, tile_seed, tiled_apply

_TAG_SPLIT = {"train": 10, "val": 11, "test": 12}
_TAG_IMAGE = 20


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_gen_data(cfg: RunConfig) -> None:
    sec = cfg.datagen
    if sec is None:
        raise ConfigError("gen-data requires a 'datagen' section")
    norm = None
    for split, n in (("train", sec.n_train), ("val", sec.n_val), ("test", sec.n_test)):
        if n <= 0:
            continue
        samples = datagen.make_dataset(
            n, sec.lr_spec, sec.hr_spec, sec.patch,
            derive_seed(cfg.seed, _TAG_SPLIT[split]), kind=sec.kind,
        )
        if norm is None:  # one affine per experiment, fitted on the train split
            norm = datagen.norm_constants(samples)
        datagen.save_dataset(
            sec.out_dir / split, samples,
            lr_spec=sec.lr_spec, hr_spec=sec.hr_spec, patch=sec.patch,
            seed=cfg.seed, kind=sec.kind, norm=norm,
        )
        _log(f"wrote {n} pairs to {sec.out_dir / split}")


def cmd_train(cfg: RunConfig) -> None:
    if cfg.train is None or cfg.train_data_dir is None:
        raise ConfigError("train requires a 'train' section")
    data = trainer.TrainData.from_dirs(cfg.train_data_dir, cfg.train_val_dir)
    out_dir = cfg.train_out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    final = out_dir / "final.ckpt"
    if final.exists():
        params, step, _ = load_checkpoint(final)
        if step >= cfg.train.max_steps:
            _log(f"{final} already trained to step {step}; nothing to do")
            return
        params, log = trainer.resume(final, data, cfg.train, cfg.arch, checkpoint_dir=out_dir)
    else:
        params, log = trainer.train(data, cfg.train, cfg.arch, checkpoint_dir=out_dir)
    trainer.write_train_log(out_dir / "train_log.csv", log)
    _log(f"trained {cfg.train.max_steps} steps; checkpoint at {final}")


def _clamp_tiling(sec: InferSection, h: int, w: int) -> tuple[int, int]:
    tile, core = sec.tile, sec.core
    if tile > min(h, w):
        tile = min(h, w)
        core = max(2, tile // 2)
        if (tile - core) % 2 != 0:
            core += 1
        _log(f"tile {sec.tile} exceeds image {h}x{w}; using tile={tile} core={core}")
    return tile, core


def _list_inputs(inputs: Path) -> list[tuple[str, Path]]:
    """Input LR images: a dataset directory or a flat directory of .f32img."""
    if (inputs / "manifest.json").exists():
        n = json.loads((inputs / "manifest.json").read_text())["n_pairs"]
        return [(f"{i:04d}", inputs / "pairs" / f"{i:04d}_lr.f32img") for i in range(n)]
    files = sorted(inputs.glob("*.f32img"))
    if not files:
        raise FileNotFoundError(f"no .f32img inputs found in {inputs}")
    out = []
    for p in files:
        stem = p.stem
        if stem.endswith("_hr") or stem.endswith("_pred"):
            continue
        out.append((stem.removesuffix("_lr"), p))
    return out


def _gt_path(gt_dir: Path, image_id: str) -> Path:
    candidates = [
        gt_dir / "pairs" / f"{image_id}_hr.f32img",
        gt_dir / f"{image_id}_hr.f32img",
        gt_dir / f"{image_id}.f32img",
    ]
    for c in candidates:
        if c.exists():
            return c
    raise FileNotFoundError(f"no ground truth for image '{image_id}' under {gt_dir}")


def _run_tiled(fn, jobs: list, threads: int) -> None:
    if threads <= 1:
        for job in jobs:
            fn(job)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fn, jobs))


def cmd_infer(cfg: RunConfig) -> None:
    sec = cfg.infer
    if sec is None:
        raise ConfigError("infer requires an 'infer' section")
    params, _, _ = load_checkpoint(sec.checkpoint)
    sec.out_dir.mkdir(parents=True, exist_ok=True)
    for idx, (image_id, path) in enumerate(_list_inputs(sec.inputs)):
        img = read_f32img(path)
        tile, core = _clamp_tiling(sec, *img.shape)
        grid = plan_tiles(*img.shape, tile, core)
        image_seed = derive_seed(cfg.seed, _TAG_IMAGE, idx)

        def one_tile(tile_img, seed):
            norm = (tile_img - params.norm_mean) / params.norm_std
            return euler_integrate(params, norm.astype(np.float32), sec.T, seed)

        pred = tiled_apply(one_tile, img, grid, lambda r, c: tile_seed(image_seed, r, c))
        write_f32img(sec.out_dir / f"{image_id}_pred.f32img", pred)
        if sec.png:
            write_png16(sec.out_dir / f"{image_id}_pred.png", pred)
    _log(f"predictions written to {sec.out_dir}")


def _tiled_ensemble(params: ModelParams, img: np.ndarray, sec: InferSection,
                    image_seed: int, threads: int):
    from .sampler import posterior_sample

    tile, core = _clamp_tiling(sec, *img.shape)
    grid = plan_tiles(*img.shape, tile, core)
    samples = np.empty((sec.K,) + img.shape, dtype=np.float32)
    mean = np.empty_like(img)
    std = np.empty_like(img) if sec.K >= 2 else None

    def one_tile(job):
        (r, c), asg, loc = job
        sub = img[r : r + grid.tile, c : c + grid.tile]
        norm = ((sub - params.norm_mean) / params.norm_std).astype(np.float32)
        ens = posterior_sample(params, norm, sec.T, sec.K, tile_seed(image_seed, r, c))
        for k in range(sec.K):
            samples[k][asg] = ens.samples[k][loc]
        mean[asg] = ens.mean[loc]
        if std is not None:
            std[asg] = ens.pixel_std[loc]

    _run_tiled(one_tile, list(zip(grid.offsets, grid.assigned, grid.local)), threads)
    return samples, mean, std


def cmd_sample(cfg: RunConfig) -> None:
    sec = cfg.sample
    if sec is None:
        raise ConfigError("sample requires a 'sample' section")
    params, _, _ = load_checkpoint(sec.checkpoint)
    for idx, (image_id, path) in enumerate(_list_inputs(sec.inputs)):
        img = read_f32img(path)
        image_seed = derive_seed(cfg.seed, _TAG_IMAGE, idx)
        samples, mean, std = _tiled_ensemble(params, img, sec, image_seed, cfg.threads)
        out = sec.out_dir / image_id
        out.mkdir(parents=True, exist_ok=True)
        for k in range(sec.K):
            write_f32img(out / f"sample_{k:03d}.f32img", samples[k])
        write_f32img(out / "mmse.f32img", mean)
        if std is not None:
            write_f32img(out / "pixel_std.f32img", std)
        (out / "ensemble.json").write_text(
            json.dumps({"K": sec.K, "T": sec.T, "image_seed": image_seed}, indent=1)
        )
    _log(f"ensembles written to {sec.out_dir}")


def cmd_eval(cfg: RunConfig) -> None:
    sec = cfg.eval
    if sec is None:
        raise ConfigError("eval requires an 'eval' section")
    preds = sorted(sec.pred_dir.glob("*_pred.f32img"))
    if not preds:
        raise FileNotFoundError(f"no *_pred.f32img files in {sec.pred_dir}")
    triples = []
    for p in preds:
        image_id = p.stem.removesuffix("_pred")
        gt = read_f32img(_gt_path(sec.gt_dir, image_id))
        triples.append((image_id, read_f32img(p), gt))
    rows = metrics.evaluate_pairs(triples, data_range=sec.data_range, scales=sec.scales)
    metrics.write_metrics_csv(sec.out_csv, rows)
    _log(f"metrics for {len(rows)} images written to {sec.out_csv}")


def cmd_calibrate(cfg: RunConfig) -> None:
    sec = cfg.calibrate
    if sec is None:
        raise ConfigError("calibrate requires a 'calibrate' section")
    ens_dirs = sorted(d for d in sec.ensembles_dir.iterdir() if (d / "ensemble.json").exists())
    if not ens_dirs:
        raise FileNotFoundError(f"no ensemble directories under {sec.ensembles_dir}")
    points = []
    for d in ens_dirs:
        std_path = d / "pixel_std.f32img"
        if not std_path.exists():
            raise FileNotFoundError(f"{d}: ensemble has no pixel_std (K < 2?)")
        pixel_std = read_f32img(std_path)
        mmse_img = read_f32img(d / "mmse.f32img")
        gt = read_f32img(_gt_path(sec.gt_dir, d.name))
        points.append(
            cal.CalibrationPoint(
                image_id=d.name,
                rmv=float(np.sqrt(np.mean(pixel_std.astype(np.float64) ** 2))),
                rmse=metrics.rmse(mmse_img, gt),
            )
        )
    fit = cal.fit_linear(points)
    cal.reliability_export(fit, sec.out_csv)
    _log(f"calibration fit alpha={fit.alpha:.4f} beta={fit.beta:.4f} r2={fit.r2:.4f} "
         f"written to {sec.out_csv}")


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "calibrate": cmd_calibrate,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="flowsr",
        description="Conditional flow matching super-resolution pipelines.",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--threads", type=int, default=None, help="override config threads")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, seed_override=args.seed, threads_override=args.threads)
        _COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, RuntimeError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
