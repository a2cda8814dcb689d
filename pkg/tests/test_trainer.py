import numpy as np
import pytest

from flowsr.model import ArchConfig, load_checkpoint, save_checkpoint
from flowsr.trainer import (
    TrainConfig,
    TrainData,
    TrainingDiverged,
    resume,
    train,
    write_train_log,
)

from conftest import TINY_ARCH

FAST = dict(T=20, lr=1e-3, batch_size=4, patch=32, val_every=50)


def params_equal(a, b) -> bool:
    return all(
        np.array_equal(a.arrays[k].view(np.uint32), b.arrays[k].view(np.uint32))
        for k in a.arrays
    )


def test_zero_steps_returns_initial(toy_data):
    cfg = TrainConfig(max_steps=0, seed=1, **FAST)
    params, log = train(toy_data, cfg, TINY_ARCH)
    assert log.steps == []
    assert np.all(params.arrays["conv_out.w"] == 0.0)
    assert params.norm_mean == toy_data.norm_mean


def test_training_is_deterministic(toy_data):
    cfg = TrainConfig(max_steps=25, seed=3, **FAST)
    p1, log1 = train(toy_data, cfg, TINY_ARCH)
    p2, log2 = train(toy_data, cfg, TINY_ARCH)
    assert params_equal(p1, p2)
    assert log1.losses == log2.losses


def test_different_seeds_differ(toy_data):
    cfg1 = TrainConfig(max_steps=10, seed=3, **FAST)
    cfg2 = TrainConfig(max_steps=10, seed=4, **FAST)
    p1, _ = train(toy_data, cfg1, TINY_ARCH)
    p2, _ = train(toy_data, cfg2, TINY_ARCH)
    assert not params_equal(p1, p2)


def test_loss_decreases_on_toy_dataset(toy_data):
    cfg = TrainConfig(max_steps=500, seed=11, **FAST)
    params, log = train(toy_data, cfg, TINY_ARCH)
    first = float(np.mean(log.losses[:100]))
    last = float(np.mean(log.losses[400:500]))
    assert last < 0.5 * first
    assert all(np.isfinite(v) for v in log.losses)

    # 200 steps already halve the loss relative to the zero-velocity start,
    # whose expected value is E||x1 - x0||^2 = 1 + mean(x1_norm^2)
    hr_norm_sq = np.mean(
        [((p.hr - toy_data.norm_mean) / toy_data.norm_std) ** 2 for p in toy_data.samples]
    )
    initial = 1.0 + float(hr_norm_sq)
    assert float(np.mean(log.losses[180:200])) <= 0.5 * initial


def test_dataset_not_mutated(toy_data):
    before = [(p.lr.copy(), p.hr.copy()) for p in toy_data.samples]
    cfg = TrainConfig(max_steps=10, seed=5, **FAST)
    train(toy_data, cfg, TINY_ARCH)
    for (lr0, hr0), p in zip(before, toy_data.samples):
        assert np.array_equal(lr0, p.lr)
        assert np.array_equal(hr0, p.hr)


def test_resume_equals_straight_run(tmp_path, toy_data):
    full_cfg = TrainConfig(max_steps=200, seed=21, **FAST)
    p_straight, _ = train(toy_data, full_cfg, TINY_ARCH)

    half_cfg = TrainConfig(max_steps=100, seed=21, **FAST)
    train(toy_data, half_cfg, TINY_ARCH, checkpoint_dir=tmp_path)
    p_resumed, _ = resume(tmp_path / "ckpt_000100.ckpt", toy_data, full_cfg, TINY_ARCH)
    assert params_equal(p_straight, p_resumed)


def test_resume_wrong_arch_refused(tmp_path, toy_data):
    cfg = TrainConfig(max_steps=10, seed=2, **FAST)
    train(toy_data, cfg, TINY_ARCH, checkpoint_dir=tmp_path)
    other = ArchConfig(base_channels=4, n_res_blocks=1, kernel_size=3, time_embed_dim=16)
    with pytest.raises(ValueError, match="arch"):
        resume(tmp_path / "final.ckpt", toy_data, cfg, other)


def test_resume_at_max_steps_is_noop(tmp_path, toy_data):
    cfg = TrainConfig(max_steps=10, seed=2, **FAST)
    p1, _ = train(toy_data, cfg, TINY_ARCH, checkpoint_dir=tmp_path)
    p2, log = resume(tmp_path / "final.ckpt", toy_data, cfg, TINY_ARCH)
    assert log.steps == []
    assert params_equal(p1, p2)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # overflow is the point
def test_divergence_aborts_with_diagnostic(toy_data):
    cfg = TrainConfig(max_steps=200, seed=1, T=20, lr=1e14, batch_size=4,
                      patch=32, val_every=1000, optimizer="sgd")
    with pytest.raises(TrainingDiverged) as exc:
        train(toy_data, cfg, TINY_ARCH)
    assert exc.value.step >= 0
    assert exc.value.lr == 1e14


def test_sgd_mode_trains(toy_data):
    cfg = TrainConfig(max_steps=20, seed=9, T=20, lr=1e-3, batch_size=4,
                      patch=32, val_every=50, optimizer="sgd")
    params, log = train(toy_data, cfg, TINY_ARCH)
    assert len(log.losses) == 20
    assert not np.all(params.arrays["conv_out.w"] == 0.0)


def test_validation_psnr_logged(toy_data):
    data = TrainData(
        samples=toy_data.samples[:6],
        norm_mean=toy_data.norm_mean,
        norm_std=toy_data.norm_std,
        val_samples=toy_data.samples[6:],
    )
    cfg = TrainConfig(max_steps=20, seed=2, T=4, lr=1e-3, batch_size=2,
                      patch=32, val_every=10)
    _, log = train(data, cfg, TINY_ARCH)
    assert set(log.val_psnr.keys()) == {10, 20}
    assert all(np.isfinite(v) for v in log.val_psnr.values())


def test_checkpoints_written_on_schedule(tmp_path, toy_data):
    cfg = TrainConfig(max_steps=20, seed=2, T=4, lr=1e-3, batch_size=2,
                      patch=32, val_every=10)
    train(toy_data, cfg, TINY_ARCH, checkpoint_dir=tmp_path)
    names = sorted(p.name for p in tmp_path.glob("*.ckpt"))
    assert names == ["ckpt_000010.ckpt", "ckpt_000020.ckpt", "final.ckpt"]
    _, step, state = load_checkpoint(tmp_path / "final.ckpt")
    assert step == 20
    assert state is not None  # adam state persisted for resume


def test_train_log_csv(tmp_path, toy_data):
    cfg = TrainConfig(max_steps=12, seed=2, T=4, lr=1e-3, batch_size=2,
                      patch=32, val_every=6)
    data = TrainData(
        samples=toy_data.samples, norm_mean=toy_data.norm_mean,
        norm_std=toy_data.norm_std, val_samples=toy_data.samples[:2],
    )
    _, log = train(data, cfg, TINY_ARCH)
    path = tmp_path / "train_log.csv"
    write_train_log(path, log)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "step,loss,wall_ms,val_psnr"
    assert len(lines) == 13
    # val column filled only on validation steps
    assert lines[6].split(",")[3] != ""
    assert lines[1].split(",")[3] == ""


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(max_steps=-1).validate()
    with pytest.raises(ValueError):
        TrainConfig(max_steps=1, patch=33).validate()
    with pytest.raises(ValueError):
        TrainConfig(max_steps=1, optimizer="rmsprop").validate()
