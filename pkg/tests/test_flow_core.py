import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowsr.flow_core import (
    FlowBatch,
    TimeGrid,
    fm_loss,
    gaussian_image,
    interpolate,
    sample_path,
    sample_time,
    target_velocity,
)

from conftest import random_image


class TestInterpolate:
    def test_endpoint_t0_bitwise(self):
        x0, x1 = random_image(seed=1), random_image(seed=2)
        assert np.array_equal(interpolate(x0, x1, 0.0), x0)

    def test_endpoint_t1_bitwise(self):
        x0, x1 = random_image(seed=1), random_image(seed=2)
        assert np.array_equal(interpolate(x0, x1, 1.0), x1)

    def test_midpoint(self):
        x0 = np.zeros((4, 4), np.float32)
        x1 = np.ones((4, 4), np.float32)
        assert np.array_equal(interpolate(x0, x1, 0.5), np.full((4, 4), 0.5, np.float32))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            interpolate(np.zeros((4, 4)), np.zeros((4, 5)), 0.5)

    def test_t_out_of_range(self):
        x = np.zeros((4, 4))
        with pytest.raises(ValueError):
            interpolate(x, x, 1.5)

    @given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_endpoints_bitwise_property(self, s0, s1):
        x0, x1 = random_image(seed=s0), random_image(seed=s1)
        assert np.array_equal(interpolate(x0, x1, 0.0), x0)
        assert np.array_equal(interpolate(x0, x1, 1.0), x1)


class TestSamplePath:
    def test_t1_is_target_any_seed(self):
        x1 = random_image(seed=5)
        for seed in (0, 1, 999):
            assert np.array_equal(sample_path(x1, 1.0, seed), x1)

    def test_matches_interpolate_route_bitwise(self):
        x1 = random_image(seed=5)
        for t in (0.0, 0.35, 0.5, 1.0):
            a = sample_path(x1, t, rng_seed=42)
            b = interpolate(gaussian_image(x1.shape, 42), x1, t)
            assert np.array_equal(a, b)

    def test_moments_t0(self):
        # marginal at t=0 is N(0, I)
        x1 = np.full((4, 4), 3.0, np.float32)
        n = 10_000
        draws = np.stack([sample_path(x1, 0.0, seed) for seed in range(n)])
        mean = draws.mean(axis=0, dtype=np.float64)
        var = draws.var(axis=0, dtype=np.float64)
        assert np.all(np.abs(mean) <= 3.0 / np.sqrt(n) + 1e-12)
        assert np.all(np.abs(var - 1.0) <= 0.05)

    def test_moments_t_half(self):
        # marginal N(t*x1, (1-t)^2 I): mean 0.5, var 0.25 for x1 = ones
        x1 = np.ones((4, 4), np.float32)
        n = 10_000
        draws = np.stack([sample_path(x1, 0.5, seed) for seed in range(n)])
        mean = draws.mean(axis=0, dtype=np.float64)
        var = draws.var(axis=0, dtype=np.float64)
        assert np.all(np.abs(mean - 0.5) <= 3.0 * 0.5 / np.sqrt(n))
        assert np.all(np.abs(var - 0.25) <= 0.05 * 0.25)


class TestTargetVelocity:
    def test_equal_inputs_zero(self):
        x = random_image(seed=3)
        assert np.all(target_velocity(x, x) == 0.0)

    def test_zero_base(self):
        x1 = random_image(seed=4)
        assert np.array_equal(target_velocity(np.zeros_like(x1), x1), x1)

    def test_algebraic_identity(self):
        # x_t + (1 - t) * v_target recovers x1
        x0, x1 = random_image(seed=1), random_image(seed=2)
        t = 0.3
        recon = interpolate(x0, x1, t) + (1.0 - t) * target_velocity(x0, x1)
        assert np.allclose(recon, x1, atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            target_velocity(np.zeros((2, 2)), np.zeros((3, 3)))


class TestSampleTime:
    def test_grid_validation(self):
        with pytest.raises(ValueError):
            TimeGrid(0)
        assert TimeGrid(20).delta == pytest.approx(0.05)

    def test_t1_binary(self):
        grid = TimeGrid(1)
        vals = {sample_time(grid, seed) for seed in range(50)}
        assert vals == {0.0, 1.0}

    def test_deterministic(self):
        grid = TimeGrid(20)
        assert sample_time(grid, 7) == sample_time(grid, 7)

    def test_values_on_grid(self):
        grid = TimeGrid(20)
        for seed in range(200):
            t = sample_time(grid, seed)
            assert t in {i / 20 for i in range(21)}

    def test_frequencies_uniform(self):
        # each of the T+1 bins within 4 binomial stds of 1/(T+1)
        from flowsr.flow_core import draw_time
        from flowsr.rng import generator

        grid = TimeGrid(20)
        n = 100_000
        rng = generator(123)
        draws = np.array([draw_time(grid, rng) for _ in range(n)])
        p = 1.0 / 21.0
        sigma = np.sqrt(p * (1 - p) / n)
        for i in range(21):
            freq = np.mean(draws == i / 20)
            assert abs(freq - p) <= 4 * sigma


class TestFmLoss:
    def test_perfect_prediction(self):
        x0, x1 = random_image(seed=1), random_image(seed=2)
        assert fm_loss(x1 - x0, x0, x1) == 0.0

    def test_constant_offset(self):
        x0, x1 = random_image(seed=1), random_image(seed=2)
        c = 0.75
        v = (x1 - x0) + np.full_like(x0, c)
        assert fm_loss(v, x0, x1) == pytest.approx(c * c, rel=1e-6)

    def test_matches_bruteforce_2x2(self):
        rng = np.random.default_rng(9)
        v = rng.normal(size=(2, 2))
        x0 = rng.normal(size=(2, 2))
        x1 = rng.normal(size=(2, 2))
        acc = 0.0
        for i in range(2):
            for j in range(2):
                d = float(v[i, j]) - (float(x1[i, j]) - float(x0[i, j]))
                acc += d * d
        assert fm_loss(v, x0, x1) == pytest.approx(acc / 4.0, abs=1e-12)

    @given(st.integers(0, 2**32 - 1), st.floats(-2.0, 2.0))
    @settings(max_examples=25, deadline=None)
    def test_quadratic_in_perturbation(self, seed, c):
        # loss(target + d) == mean(d^2)
        x0, x1 = random_image(seed=seed), random_image(seed=seed + 1)
        d = random_image(seed=seed + 2) * np.float32(c)
        loss = fm_loss((x1 - x0) + d, x0, x1)
        # float32 target cancellation leaves ~1e-7-relative noise
        assert loss == pytest.approx(float(np.mean(d.astype(np.float64) ** 2)),
                                     rel=1e-5, abs=1e-7)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            fm_loss(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((4, 4)))


def test_flow_batch_carrier():
    x0 = random_image(seed=0)
    x1 = random_image(seed=1)
    fb = FlowBatch(x0=x0, x_t=interpolate(x0, x1, 0.25), x_m0=x1, x_m1=x1, t=0.25)
    assert np.allclose(fb.x_t, 0.75 * x0 + 0.25 * x1, atol=1e-7)
