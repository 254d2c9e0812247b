"""Quantization-aware training loop.

Every step quantizes the master weights on the forward pass and applies the
straight-through gradients back onto the masters, which stay full precision
for the whole run. The learning-rate schedule is a single step drop (the
large initial rate for fast early convergence, then a smaller rate for
fine-grained updates); an EMA shadow of the masters is maintained for
sampling, and the logged loss is exponentially smoothed for readability.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import deploy
from .autograd import Tensor
from .data import batch_for_step
from .diffusion import NoiseSchedule, training_loss
from .model import DiT

__all__ = [
    "TrainConfig",
    "TrainState",
    "TrainingDiverged",
    "lr_at",
    "smoothed_loss",
    "qat_step",
    "reproject_alphas",
    "train",
    "ALPHA_FLOOR",
]

# alphas are reprojected here if an optimizer update drives them <= 0
ALPHA_FLOOR = 1e-6


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 5000
    batch_size: int = 16
    lr_initial: float = 5e-4
    lr_after_drop: float = 1e-4
    lr_drop_step: int | None = None  # None: drop at 60% of the run
    ema_decay: float = 0.999
    smoothing: float = 0.995
    seed: int = 0
    clip_grad: bool = True
    clip_norm: float = 1.0
    weight_decay: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.95
    adam_eps: float = 1e-8

    def __post_init__(self):
        # zero is allowed so a frozen-parameter step stays expressible
        if self.lr_initial < 0 or self.lr_after_drop < 0:
            raise ValueError("learning rates must be non-negative")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        drop = self.resolved_drop_step
        if not 0 <= drop <= self.total_steps:
            raise ValueError(f"lr_drop_step {drop} outside [0, {self.total_steps}]")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must be in [0, 1)")
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError("smoothing must be in [0, 1)")

    @property
    def resolved_drop_step(self) -> int:
        if self.lr_drop_step is None:
            return (self.total_steps * 3) // 5
        return self.lr_drop_step


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Step schedule: lr_initial before the drop step, lr_after_drop from it on."""
    return cfg.lr_initial if step < cfg.resolved_drop_step else cfg.lr_after_drop


def smoothed_loss(prev: float | None, raw: float, factor: float) -> float:
    """Exponential smoothing; the first observation initializes the stream."""
    if prev is None:
        return raw
    return factor * prev + (1.0 - factor) * raw


def _decay_exempt(name: str) -> bool:
    return name.endswith((".alpha", ".bias", ".gain")) or name in ("pos_embed", "label_embed.table")


class AdamW:
    """Adaptive moments with decoupled weight decay.

    Decay is skipped on norms, biases, alphas, and embedding tables; with the
    default decay of zero this reduces to plain Adam.
    """

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, Tensor], lr: float) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.adam_beta1**self.t
        bc2 = 1.0 - cfg.adam_beta2**self.t
        for name, p in params.items():
            g = p.grad
            if g is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= cfg.adam_beta1
            m += (1.0 - cfg.adam_beta1) * g
            v *= cfg.adam_beta2
            v += (1.0 - cfg.adam_beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
            if cfg.weight_decay and not _decay_exempt(name):
                update = update + cfg.weight_decay * p.data
            p.data = p.data - np.asarray(lr, dtype=p.data.dtype) * update.astype(p.data.dtype)


@dataclass
class TrainState:
    """Everything the loop mutates: model masters, moments, EMA, rng, counters."""

    model: DiT
    cfg: TrainConfig
    schedule: NoiseSchedule
    optimizer: AdamW
    rng: np.random.Generator
    ema: dict[str, np.ndarray]
    step: int = 0
    smoothed: float | None = None
    log_lines: list[str] = field(default_factory=list)

    @classmethod
    def create(cls, model: DiT, cfg: TrainConfig, schedule: NoiseSchedule | None = None) -> "TrainState":
        schedule = schedule or NoiseSchedule.linear(model.num_timesteps)
        ema = {name: p.data.copy() for name, p in model.named_parameters().items()}
        return cls(model=model, cfg=cfg, schedule=schedule, optimizer=AdamW(cfg),
                   rng=np.random.default_rng(cfg.seed), ema=ema)


def _grad_global_norm(params: dict[str, Tensor]) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    return math.sqrt(total)


def reproject_alphas(model: DiT) -> int:
    """Clamp any non-positive ternary scale back to the floor; returns count."""
    fixed = 0
    for layer in model.ternary_layers().values():
        if float(layer.alpha.data) <= 0.0:
            layer.alpha.data = np.asarray(ALPHA_FLOOR, dtype=layer.alpha.data.dtype)
            fixed += 1
    return fixed


def qat_step(state: TrainState, batch: tuple[np.ndarray, np.ndarray]) -> tuple[TrainState, float]:
    """One optimization step on one batch; returns the raw loss.

    Quantized layers ternarize their masters in the forward pass; gradients
    reach the masters through the straight-through estimator. Masters are
    never overwritten with quantized values. Aborts on a non-finite loss.
    """
    model, cfg = state.model, state.cfg
    images, labels = batch
    params = model.named_parameters()
    for p in params.values():
        p.grad = None

    loss, _ = training_loss(model, images, labels, state.rng, state.schedule)
    raw = float(loss.data)
    if not math.isfinite(raw):
        raise TrainingDiverged(f"non-finite loss {raw} at step {state.step}")
    loss.backward()

    if cfg.clip_grad:
        norm = _grad_global_norm(params)
        if norm > cfg.clip_norm:
            scale = cfg.clip_norm / norm
            for p in params.values():
                if p.grad is not None:
                    p.grad = p.grad * np.asarray(scale, dtype=p.grad.dtype)

    state.optimizer.step(params, lr_at(state.step, cfg))
    reproject_alphas(model)

    d = cfg.ema_decay
    for name, p in params.items():
        state.ema[name] = d * state.ema[name] + (1.0 - d) * p.data

    state.step += 1
    state.smoothed = smoothed_loss(state.smoothed, raw, cfg.smoothing)
    state.log_lines.append(f"{state.step}\t{raw:.6f}\t{state.smoothed:.6f}")
    return state, raw


def train(model: DiT, cfg: TrainConfig, *, schedule: NoiseSchedule | None = None,
          out_dir: str | None = None, ckpt_every: int = 0,
          callback=None) -> TrainState:
    """Run the full QAT loop on the synthetic dataset.

    Writes ``loss_log.tsv`` (step, raw, smoothed; tab-separated), periodic
    checkpoints every ``ckpt_every`` steps, and final master + EMA
    checkpoints when ``out_dir`` is given. ``callback(state, raw)`` runs
    after every step when provided.
    """
    state = TrainState.create(model, cfg, schedule)
    log_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "loss_log.tsv")

    for _ in range(cfg.total_steps):
        batch = batch_for_step(state.step, cfg.batch_size, model.cfg.num_classes, cfg.seed,
                               image_size=model.cfg.image_size, channels=model.cfg.channels)
        state, raw = qat_step(state, batch)
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(state.log_lines[-1] + "\n")
        if out_dir is not None and ckpt_every and state.step % ckpt_every == 0 \
                and state.step < cfg.total_steps:
            deploy.save_checkpoint(deploy.master_checkpoint(model),
                                   os.path.join(out_dir, f"ckpt_step{state.step}.terd"))
        if callback is not None:
            callback(state, raw)

    if out_dir is not None:
        deploy.save_checkpoint(deploy.master_checkpoint(model),
                               os.path.join(out_dir, "ckpt_final.terd"))
        deploy.save_checkpoint(deploy.ema_checkpoint(model, state.ema),
                               os.path.join(out_dir, "ckpt_final_ema.terd"))
    return state
