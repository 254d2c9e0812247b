"""DDPM forward corruption, noise-prediction loss, and the ancestral sampler.

The schedule is the standard linear-beta DDPM schedule. Sampling walks a
uniformly strided subset of the timesteps; a stride over adjacent timesteps
reuses the stored per-step alpha, so ``steps == T`` reproduces the unstrided
textbook loop bit for bit. Classifier-free guidance combines the conditional
and unconditional noise predictions; guidance scale 1 short-circuits to the
conditional branch alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NoiseSchedule",
    "q_sample",
    "training_loss",
    "cfg_combine",
    "sample_timesteps",
    "ddpm_sample",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Betas and cumulative alpha products for the DDPM process."""

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty vector")
        if not ((betas > 0) & (betas < 1)).all():
            raise ValueError("betas must lie in (0, 1)")
        alphas = 1.0 - betas
        alpha_bar = np.cumprod(alphas)
        for arr in (betas, alphas, alpha_bar):
            arr.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bar", alpha_bar)

    @classmethod
    def linear(cls, num_timesteps: int = 1000, beta_start: float = 1e-4,
               beta_end: float = 2e-2) -> "NoiseSchedule":
        return cls(betas=np.linspace(beta_start, beta_end, num_timesteps))

    @property
    def num_timesteps(self) -> int:
        return self.betas.size


def q_sample(x0: np.ndarray, t, noise: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Forward corruption: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * noise."""
    x0 = np.asarray(x0)
    noise = np.asarray(noise)
    if noise.shape != x0.shape:
        raise ValueError(f"noise shape {noise.shape} does not match x0 shape {x0.shape}")
    t = np.asarray(t)
    if t.min() < 0 or t.max() >= schedule.num_timesteps:
        raise ValueError(f"timestep out of range [0, {schedule.num_timesteps})")
    ab = schedule.alpha_bar[t]
    expand = (Ellipsis,) + (None,) * (x0.ndim - t.ndim)
    c0 = np.sqrt(ab).astype(x0.dtype)[expand]
    c1 = np.sqrt(1.0 - ab).astype(x0.dtype)[expand]
    return c0 * x0 + c1 * noise


def training_loss(model, x0: np.ndarray, labels: np.ndarray, rng: np.random.Generator,
                  schedule: NoiseSchedule):
    """Noise-prediction MSE on one batch, with label dropout for guidance.

    Draws per-sample timesteps uniformly from [0, T), standard normal noise,
    and a label-drop mask with the model's class_dropout_prob. Returns the
    scalar loss tensor (for backward) alongside the drawn timesteps.
    """
    x0 = np.asarray(x0)
    batch = x0.shape[0]
    t = rng.integers(0, schedule.num_timesteps, size=batch)
    noise = rng.standard_normal(x0.shape).astype(x0.dtype)
    drop = rng.random(batch) < model.cfg.class_dropout_prob
    x_t = q_sample(x0, t, noise, schedule)
    pred = model.forward(x_t, t, labels, drop)
    diff = pred - noise
    loss = (diff * diff).mean()
    return loss, t


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, s: float) -> np.ndarray:
    """Classifier-free guidance: eps_uncond + s * (eps_cond - eps_uncond).

    ``s == 1`` returns the conditional prediction itself, exactly.
    """
    eps_cond = np.asarray(eps_cond)
    eps_uncond = np.asarray(eps_uncond)
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError(f"shape mismatch: {eps_cond.shape} vs {eps_uncond.shape}")
    if s == 1.0:
        return eps_cond
    return eps_uncond + np.asarray(s, dtype=eps_uncond.dtype) * (eps_cond - eps_uncond)


def sample_timesteps(num_timesteps: int, steps: int) -> np.ndarray:
    """Uniformly strided, strictly increasing subset of [0, T) ending at T-1."""
    if not 1 <= steps <= num_timesteps:
        raise ValueError(f"steps must be in [1, {num_timesteps}], got {steps}")
    # spacing >= 1 because steps <= T, so rounding never collides and the
    # subset always ends at T-1 (and reaches 0 whenever steps >= 2)
    taus = np.unique(np.round(np.linspace(num_timesteps - 1, 0, steps)).astype(np.int64))
    return taus


def ddpm_sample(model, labels, *, steps: int, cfg_scale: float, rng: np.random.Generator,
                schedule: NoiseSchedule | None = None, capture: dict | None = None) -> np.ndarray:
    """Ancestral DDPM sampling over a strided schedule subset.

    One noise draw per step (none on the last), so trajectories for a given
    seed are reproducible; with ``cfg_scale == 1`` only the conditional
    branch is evaluated, otherwise each step evaluates both branches and
    combines them with :func:`cfg_combine`. The reverse variance is the
    effective per-step beta (the DDPM "small" choice).
    """
    if schedule is None:
        schedule = NoiseSchedule.linear(model.num_timesteps)
    if cfg_scale < 1.0:
        raise ValueError(f"cfg_scale must be >= 1, got {cfg_scale}")
    labels = np.atleast_1d(np.asarray(labels))
    if labels.size and (labels.min() < 0 or labels.max() >= model.cfg.num_classes):
        raise ValueError(f"class label out of range [0, {model.cfg.num_classes})")
    batch = labels.shape[0]
    cfgm = model.cfg
    taus = sample_timesteps(schedule.num_timesteps, steps)
    x = rng.standard_normal((batch, cfgm.channels, cfgm.image_size, cfgm.image_size)).astype(np.float32)
    no_drop = np.zeros(batch, dtype=bool)
    all_drop = np.ones(batch, dtype=bool)
    for i in range(len(taus) - 1, -1, -1):
        t = int(taus[i])
        t_vec = np.full(batch, t)
        cap = capture if (capture is not None and i == len(taus) - 1) else None
        eps_cond = model.predict_noise(x, t_vec, labels, no_drop, capture=cap)
        if cfg_scale == 1.0:
            eps = eps_cond
        else:
            eps_uncond = model.predict_noise(x, t_vec, labels, all_drop)
            eps = cfg_combine(eps_cond, eps_uncond, cfg_scale)
        # adjacent timesteps reuse the stored alpha so that steps == T
        # matches the unstrided loop exactly; wider strides fold the skipped
        # alphas into one effective step
        if i == 0:
            alpha_eff = schedule.alpha_bar[t]
        elif taus[i - 1] == t - 1:
            alpha_eff = schedule.alphas[t]
        else:
            alpha_eff = schedule.alpha_bar[t] / schedule.alpha_bar[taus[i - 1]]
        beta_eff = 1.0 - alpha_eff
        mean = (x - np.float32(beta_eff / np.sqrt(1.0 - schedule.alpha_bar[t])) * eps) \
            / np.float32(np.sqrt(alpha_eff))
        if i > 0:
            z = rng.standard_normal(x.shape).astype(np.float32)
            x = mean + np.float32(np.sqrt(beta_eff)) * z
        else:
            x = mean
    return x
