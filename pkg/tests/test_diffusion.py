"""DDPM process tests: schedule invariants, statistical oracles, sampler equalities."""

import numpy as np
import pytest

from tridiff.autograd import Tensor
from tridiff.diffusion import (
    NoiseSchedule,
    cfg_combine,
    ddpm_sample,
    q_sample,
    sample_timesteps,
    training_loss,
)
from tridiff.model import DiT, ModelConfig

from test_model import _randomize_modulation


@pytest.fixture
def schedule():
    return NoiseSchedule.linear()


@pytest.fixture
def sampler_model(small_cfg, rng):
    model = DiT(small_cfg, seed=9)
    _randomize_modulation(model, rng)
    return model


class TestSchedule:
    def test_invariants(self, schedule):
        ab = schedule.alpha_bar
        assert schedule.betas[0] == 1e-4 and schedule.betas[-1] == 2e-2
        assert schedule.num_timesteps == 1000
        assert ((ab > 0) & (ab < 1)).all()
        assert (np.diff(ab) < 0).all()  # strictly decreasing

    def test_validation(self):
        with pytest.raises(ValueError):
            NoiseSchedule(betas=np.array([0.0, 0.5]))
        with pytest.raises(ValueError):
            NoiseSchedule(betas=np.array([0.5, 1.0]))


class TestQSample:
    def test_zero_noise_exact(self, schedule, rng):
        x0 = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
        t = np.array([17, 900])
        out = q_sample(x0, t, np.zeros_like(x0), schedule)
        coef = np.sqrt(schedule.alpha_bar[t]).astype(np.float32)[:, None, None, None]
        assert np.array_equal(out, coef * x0)

    def test_t0_close_to_x0(self, schedule, rng):
        x0 = rng.standard_normal((1, 3, 4, 4)).astype(np.float32)
        noise = rng.standard_normal(x0.shape).astype(np.float32)
        out = q_sample(x0, 0, noise, schedule)
        # beta_0 = 1e-4: the noise weight is sqrt(1e-4) = 1e-2
        np.testing.assert_allclose(out, x0, atol=5e-2)

    def test_linearity(self, schedule, rng):
        a = rng.standard_normal((2, 3, 4, 4)).astype(np.float64)
        b = rng.standard_normal((2, 3, 4, 4)).astype(np.float64)
        na = rng.standard_normal(a.shape)
        nb = rng.standard_normal(a.shape)
        t = np.array([100, 500])
        lhs = q_sample(2.0 * a + 3.0 * b, t, 2.0 * na + 3.0 * nb, schedule)
        rhs = 2.0 * q_sample(a, t, na, schedule) + 3.0 * q_sample(b, t, nb, schedule)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12)

    def test_monte_carlo_moments(self, schedule):
        # mean = sqrt(ab_t) * x0, var = 1 - ab_t; 3-standard-error window
        rng = np.random.default_rng(202)
        n = 10_000
        t = 400
        x0 = np.full((n, 1), 0.7)
        noise = rng.standard_normal((n, 1))
        draws = q_sample(x0, np.full(n, t), noise, schedule)
        ab = schedule.alpha_bar[t]
        mean_expected = np.sqrt(ab) * 0.7
        var_expected = 1.0 - ab
        se_mean = np.sqrt(var_expected / n)
        assert abs(draws.mean() - mean_expected) < 3 * se_mean
        var_obs = draws.var(ddof=1)
        se_var = var_expected * np.sqrt(2.0 / (n - 1))
        assert abs(var_obs - var_expected) < 3 * se_var

    def test_range_errors(self, schedule):
        x = np.zeros((1, 2, 2))
        with pytest.raises(ValueError):
            q_sample(x, 1000, np.zeros_like(x), schedule)
        with pytest.raises(ValueError):
            q_sample(x, -1, np.zeros_like(x), schedule)
        with pytest.raises(ValueError):
            q_sample(x, 0, np.zeros((1, 2, 3)), schedule)


class _PerfectModel:
    """Stub that inverts q_sample for known x0: returns the exact noise."""

    def __init__(self, x0, schedule, cfg):
        self.x0 = x0
        self.schedule = schedule
        self.cfg = cfg

    def forward(self, x_t, t, labels, drop):
        x = x_t.data if isinstance(x_t, Tensor) else np.asarray(x_t)
        ab = self.schedule.alpha_bar[np.asarray(t)][:, None, None, None]
        noise = (x - np.sqrt(ab) * self.x0) / np.sqrt(1.0 - ab)
        return Tensor(noise.astype(x.dtype))


class _ZeroModel:
    def __init__(self, cfg):
        self.cfg = cfg

    def forward(self, x_t, t, labels, drop):
        x = x_t.data if isinstance(x_t, Tensor) else np.asarray(x_t)
        return Tensor(np.zeros_like(x))


class TestTrainingLoss:
    def test_perfect_model_zero_loss(self, schedule, rng):
        cfg = ModelConfig()
        x0 = rng.standard_normal((4, 3, 16, 16)).astype(np.float64)
        model = _PerfectModel(x0, schedule, cfg)
        loss, _ = training_loss(model, x0, np.zeros(4, dtype=int), rng, schedule)
        assert float(loss.data) < 1e-12

    def test_zero_model_loss_near_one(self, schedule):
        # loss = E[noise^2] = 1; MC over batch*pixels draws
        rng = np.random.default_rng(77)
        cfg = ModelConfig()
        x0 = np.zeros((8, 3, 16, 16), dtype=np.float64)
        model = _ZeroModel(cfg)
        losses = [float(training_loss(model, x0, np.zeros(8, dtype=int), rng, schedule)[0].data)
                  for _ in range(5)]
        n = np.prod(x0.shape) * len(losses)
        se = np.sqrt(2.0 / n)  # var of z^2 is 2
        assert abs(np.mean(losses) - 1.0) < 3 * se

    def test_nonnegative(self, sampler_model, schedule, rng):
        for _ in range(5):
            x0 = rng.standard_normal((2, 3, 16, 16)).astype(np.float32)
            loss, _ = training_loss(sampler_model, x0, np.array([0, 1]), rng, schedule)
            assert float(loss.data) >= 0.0


class TestCfgCombine:
    def test_s1_returns_conditional_exactly(self, rng):
        c = rng.standard_normal((2, 3)).astype(np.float32)
        u = rng.standard_normal((2, 3)).astype(np.float32)
        out = cfg_combine(c, u, 1.0)
        assert out is c or np.array_equal(out, c)
        assert out.tobytes() == c.tobytes()

    def test_s0_returns_unconditional_exactly(self, rng):
        c = rng.standard_normal((2, 3))
        u = rng.standard_normal((2, 3))
        assert np.array_equal(cfg_combine(c, u, 0.0), u)

    def test_scalar_example(self):
        assert cfg_combine(np.asarray(2.0), np.asarray(1.0), 1.5) == 2.5

    def test_affine_in_s(self, rng):
        c = rng.standard_normal(5)
        u = rng.standard_normal(5)
        for s1, s2, w in [(0.0, 2.0, 0.25), (1.0, 3.0, 0.5)]:
            blend = w * cfg_combine(c, u, s1) + (1 - w) * cfg_combine(c, u, s2)
            direct = cfg_combine(c, u, w * s1 + (1 - w) * s2)
            np.testing.assert_allclose(blend, direct, rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            cfg_combine(np.zeros(3), np.zeros(4), 2.0)


class _CountingModel:
    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def __getattr__(self, item):
        return getattr(self.inner, item)

    def predict_noise(self, *args, **kwargs):
        self.calls += 1
        return self.inner.predict_noise(*args, **kwargs)


def reference_unstrided_loop(model, labels, schedule, seed):
    """Textbook DDPM ancestral loop (conditional only), one step per timestep."""
    rng = np.random.default_rng(seed)
    cfg = model.cfg
    batch = len(labels)
    x = rng.standard_normal((batch, cfg.channels, cfg.image_size, cfg.image_size)).astype(np.float32)
    no_drop = np.zeros(batch, dtype=bool)
    for t in range(schedule.num_timesteps - 1, -1, -1):
        eps = model.predict_noise(x, np.full(batch, t), labels, no_drop)
        beta = schedule.betas[t]
        alpha = schedule.alphas[t]
        mean = (x - np.float32(beta / np.sqrt(1.0 - schedule.alpha_bar[t])) * eps) \
            / np.float32(np.sqrt(alpha))
        if t > 0:
            x = mean + np.float32(np.sqrt(beta)) * rng.standard_normal(x.shape).astype(np.float32)
        else:
            x = mean
    return x


class TestSampler:
    def test_timestep_subsets(self):
        assert sample_timesteps(1000, 1000).tolist() == list(range(1000))
        taus = sample_timesteps(1000, 250)
        assert len(taus) == 250 and taus[0] == 0 and taus[-1] == 999
        assert sample_timesteps(1000, 1).tolist() == [999]
        with pytest.raises(ValueError):
            sample_timesteps(1000, 0)
        with pytest.raises(ValueError):
            sample_timesteps(1000, 1001)

    def test_fixed_seed_reproducible(self, sampler_model):
        sched = NoiseSchedule.linear(50)
        a = ddpm_sample(sampler_model, [1, 2], steps=10, cfg_scale=2.0,
                        rng=np.random.default_rng(5), schedule=sched)
        b = ddpm_sample(sampler_model, [1, 2], steps=10, cfg_scale=2.0,
                        rng=np.random.default_rng(5), schedule=sched)
        assert np.array_equal(a, b)

    def test_steps_equal_T_matches_reference_loop(self, sampler_model):
        sched = NoiseSchedule.linear(40)
        got = ddpm_sample(sampler_model, [0, 3], steps=40, cfg_scale=1.0,
                          rng=np.random.default_rng(11), schedule=sched)
        want = reference_unstrided_loop(sampler_model, [0, 3], sched, seed=11)
        assert np.array_equal(got, want)

    def test_guidance_scale_one_equals_conditional_only(self, sampler_model):
        # bit-exact: same seed, same draws, guidance path short-circuits
        sched = NoiseSchedule.linear(60)
        got = ddpm_sample(sampler_model, [2], steps=15, cfg_scale=1.0,
                          rng=np.random.default_rng(3), schedule=sched)
        counting = _CountingModel(sampler_model)
        again = ddpm_sample(counting, [2], steps=15, cfg_scale=1.0,
                            rng=np.random.default_rng(3), schedule=sched)
        assert np.array_equal(got, again)
        assert counting.calls == 15

    def test_model_eval_counts(self, sampler_model):
        sched = NoiseSchedule.linear(30)
        counting = _CountingModel(sampler_model)
        ddpm_sample(counting, [0], steps=7, cfg_scale=4.0,
                    rng=np.random.default_rng(0), schedule=sched)
        assert counting.calls == 14
        counting.calls = 0
        ddpm_sample(counting, [0], steps=7, cfg_scale=1.0,
                    rng=np.random.default_rng(0), schedule=sched)
        assert counting.calls == 7

    def test_high_guidance_stays_finite(self, sampler_model):
        out = ddpm_sample(sampler_model, [0, 1], steps=250, cfg_scale=10.0,
                          rng=np.random.default_rng(1))
        assert np.isfinite(out).all()

    def test_invalid_inputs(self, sampler_model):
        with pytest.raises(ValueError):
            ddpm_sample(sampler_model, [99], steps=5, cfg_scale=1.0,
                        rng=np.random.default_rng(0))
        with pytest.raises(ValueError):
            ddpm_sample(sampler_model, [0], steps=5, cfg_scale=0.5,
                        rng=np.random.default_rng(0))
