import math

import numpy as np
import pytest

from flowsr.datagen import (
    DegradationSpec,
    Structure,
    degrade,
    gaussian_blur,
    gen_structure,
    load_dataset,
    make_dataset,
    norm_constants,
    save_dataset,
)

# measured once on the shipped generator; must stay bit-stable
CURVES_128_SEED3_FRACTION = 0.14459228515625

NOISELESS = dict(gain=1e13, read_sigma=0.0)


def test_gen_structure_deterministic():
    a = gen_structure("filaments", 64, 64, seed=7)
    b = gen_structure("filaments", 64, 64, seed=7)
    assert np.array_equal(a.pixels, b.pixels)


def test_gen_structure_seeds_differ():
    a = gen_structure("filaments", 64, 64, seed=7)
    b = gen_structure("filaments", 64, 64, seed=8)
    assert not np.array_equal(a.pixels, b.pixels)


@pytest.mark.parametrize("kind", ["filaments", "pits", "curves"])
@pytest.mark.parametrize("seed", [0, 1, 12345])
def test_gen_structure_normalized(kind, seed):
    s = gen_structure(kind, 64, 64, seed=seed)
    assert s.pixels.min() >= 0.0
    assert s.pixels.max() == 1.0
    assert np.all(np.isfinite(s.pixels))


def test_gen_structure_curves_coverage_fixture():
    s = gen_structure("curves", 128, 128, seed=3)
    frac = float((s.pixels > 0.1).mean())
    assert 0.005 <= frac <= 0.5
    assert frac == pytest.approx(CURVES_128_SEED3_FRACTION, abs=1e-12)


def test_gen_structure_rejects_small_dims():
    with pytest.raises(ValueError):
        gen_structure("filaments", 16, 64, seed=0)
    with pytest.raises(ValueError):
        gen_structure("pits", 64, 31, seed=0)


def test_gen_structure_rejects_unknown_kind():
    with pytest.raises(ValueError):
        gen_structure("blobs", 64, 64, seed=0)


def test_degradation_spec_validation():
    with pytest.raises(ValueError):
        DegradationSpec(psf_sigma=0.0, gain=10.0).validate()
    with pytest.raises(ValueError):
        DegradationSpec(psf_sigma=1.0, gain=-1.0).validate()
    with pytest.raises(ValueError):
        DegradationSpec(psf_sigma=1.0, gain=1.0, read_sigma=-0.1).validate()


def test_degrade_deterministic():
    s = gen_structure("pits", 48, 48, seed=2)
    spec = DegradationSpec(psf_sigma=1.5, gain=30.0, read_sigma=0.05)
    assert np.array_equal(degrade(s, spec, 11), degrade(s, spec, 11))
    assert not np.array_equal(degrade(s, spec, 11), degrade(s, spec, 12))


def test_degrade_noiseless_limit_matches_blur():
    s = gen_structure("filaments", 48, 48, seed=4)
    out = degrade(s, DegradationSpec(psf_sigma=0.25, gain=1e9, read_sigma=0.0), 3)
    blur_only = gaussian_blur(s.pixels, 0.25)
    assert np.abs(out - blur_only).max() < 1e-3


def test_degrade_delta_matches_analytic_kernel():
    # blur of a delta is the normalized truncated 2-D Gaussian
    h = w = 33
    delta = np.zeros((h, w), np.float32)
    delta[16, 16] = 1.0
    s = Structure(pixels=delta, kind="filaments", seed=0)
    sigma = 2.0
    out = degrade(s, DegradationSpec(psf_sigma=sigma, **NOISELESS), 5)
    r = math.ceil(4 * sigma)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    g = np.exp(-((yy - 16) ** 2 + (xx - 16) ** 2) / (2 * sigma**2))
    g[(np.abs(yy - 16) > r) | (np.abs(xx - 16) > r)] = 0.0
    g /= g.sum()
    assert np.abs(out - g).max() < 1e-6


def test_degrade_zero_structure_stays_zero():
    s = Structure(pixels=np.zeros((40, 40), np.float32), kind="filaments", seed=0)
    out = degrade(s, DegradationSpec(psf_sigma=1.0, gain=20.0, read_sigma=0.0), 9)
    assert np.all(out == 0.0)


def test_noise_variance_is_signal_dependent():
    # empirical variance over >= 10000 draws at intensity v fits v/gain + read^2
    v, gain, read = 0.5, 50.0, 0.02
    s = Structure(pixels=np.full((100, 100), v, np.float32), kind="filaments", seed=0)
    spec = DegradationSpec(psf_sigma=0.5, gain=gain, read_sigma=read)
    draws = np.stack([degrade(s, spec, seed) for seed in range(10)])
    emp = float(draws.var(dtype=np.float64))
    expected = v / gain + read**2
    assert abs(emp - expected) / expected < 0.10


def test_blur_preserves_mean():
    for seed in range(3):
        s = gen_structure("filaments", 64, 64, seed=seed)
        blurred = gaussian_blur(s.pixels, 3.0)
        m = float(s.pixels.mean(dtype=np.float64))
        assert abs(float(blurred.mean()) - m) <= 1e-3 * m


def test_make_dataset_shapes_and_determinism():
    lr = DegradationSpec(psf_sigma=3.0, gain=50.0, read_sigma=0.02)
    hr = DegradationSpec(psf_sigma=1.0, gain=200.0, read_sigma=0.01)
    ds = make_dataset(10, lr, hr, 64, seed=77)
    assert len(ds) == 10
    for p in ds:
        assert p.lr.shape == (64, 64)
        assert p.hr.shape == (64, 64)
    ds2 = make_dataset(10, lr, hr, 64, seed=77)
    for a, b in zip(ds, ds2):
        assert np.array_equal(a.lr, b.lr)
        assert np.array_equal(a.hr, b.hr)
        assert a.structure_seed == b.structure_seed


def test_make_dataset_rejects_blurrier_hr():
    lr = DegradationSpec(psf_sigma=1.0, gain=50.0)
    hr = DegradationSpec(psf_sigma=2.0, gain=50.0)
    with pytest.raises(ValueError, match="sharper"):
        make_dataset(4, lr, hr, 64, seed=0)


def test_make_dataset_noiseless_means_agree():
    lr = DegradationSpec(psf_sigma=3.0, **NOISELESS)
    hr = DegradationSpec(psf_sigma=1.0, **NOISELESS)
    ds = make_dataset(12, lr, hr, 64, seed=99)
    mean_lr = float(np.mean([p.lr.mean(dtype=np.float64) for p in ds]))
    mean_hr = float(np.mean([p.hr.mean(dtype=np.float64) for p in ds]))
    assert abs(mean_lr - mean_hr) <= 1e-3 * mean_hr


def test_pairs_share_structure():
    lr = DegradationSpec(psf_sigma=3.0, **NOISELESS)
    hr = DegradationSpec(psf_sigma=1.0, **NOISELESS)
    ds = make_dataset(4, lr, hr, 64, seed=5)
    # same underlying structure: the HR (mild blur) crop correlates strongly
    # with the LR (strong blur) crop of the same pair
    for p in ds:
        c = np.corrcoef(p.lr.ravel(), p.hr.ravel())[0, 1]
        assert c > 0.7


def test_dataset_save_load_roundtrip(tmp_path):
    lr = DegradationSpec(psf_sigma=2.0, gain=80.0, read_sigma=0.02)
    hr = DegradationSpec(psf_sigma=0.8, gain=300.0, read_sigma=0.01)
    ds = make_dataset(5, lr, hr, 32, seed=11)
    norm = norm_constants(ds)
    save_dataset(tmp_path / "d", ds, lr_spec=lr, hr_spec=hr, patch=32, seed=11,
                 kind="filaments", norm=norm)
    back, manifest = load_dataset(tmp_path / "d")
    assert manifest["n_pairs"] == 5
    assert manifest["norm"]["mean"] == pytest.approx(norm[0])
    assert manifest["norm"]["std"] == pytest.approx(norm[1])
    assert manifest["lr_spec"]["psf_sigma"] == 2.0
    for a, b in zip(ds, back):
        assert np.array_equal(a.lr, b.lr)
        assert np.array_equal(a.hr, b.hr)
        assert a.structure_seed == b.structure_seed


def test_load_dataset_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)
