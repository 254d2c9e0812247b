"""Activation-distribution studies and checkpoint size accounting.

``activation_pilot`` rebuilds the motivating experiment for the RMS-normed
modulation path: a wide randomly initialized projection is fed an all-ones
batch, once with ternarized weights, once with ternarized weights followed
by an RMS norm, and once at full precision. The ternary variant produces
activations an order of magnitude larger than the full-precision reference;
the norm pulls them back to unit scale.

``size_report`` accounts the dense-vs-packed storage of a model, either
analytically from a config (nothing is allocated, so arbitrarily large
shapes are fine) or from a concrete checkpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ternary as tq
from .bitpack import PackedTernary, packed_nbytes
from .checkpoint import Checkpoint
from .model import MODULATION_SITES, DiT, ModelConfig, parameter_specs

__all__ = [
    "VariantStats",
    "activation_pilot",
    "activation_capture",
    "SizeReport",
    "size_report",
    "size_report_from_checkpoint",
    "PILOT_IN_DIM",
    "PILOT_OUT_DIM",
    "PILOT_BATCH",
]

# the wide modulation-like projection studied in the pilot
PILOT_IN_DIM = 1024
PILOT_OUT_DIM = 9216
PILOT_BATCH = 512

# per-packed-tensor metadata: alpha (f32) + pad_count (u8)
PACKED_META_BYTES = 5


@dataclass(frozen=True)
class VariantStats:
    """Box-plot statistics of one variant's activations."""

    variant: str
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean_square: float

    @classmethod
    def of(cls, variant: str, values: np.ndarray) -> "VariantStats":
        v = np.asarray(values, dtype=np.float64).ravel()
        q1, med, q3 = np.percentile(v, [25.0, 50.0, 75.0])
        return cls(variant=variant, min=float(v.min()), q1=float(q1), median=float(med),
                   q3=float(q3), max=float(v.max()), mean_square=float((v**2).mean()))

    def csv_row(self) -> str:
        return (f"{self.variant},{self.min:.6g},{self.q1:.6g},{self.median:.6g},"
                f"{self.q3:.6g},{self.max:.6g},{self.mean_square:.6g}")


def _stats_table(stats: list[VariantStats]) -> str:
    header = f"{'variant':<16}{'min':>12}{'q1':>12}{'median':>12}{'q3':>12}{'max':>12}{'mean_sq':>12}"
    rows = [header, "-" * len(header)]
    for s in stats:
        rows.append(f"{s.variant:<16}{s.min:>12.4g}{s.q1:>12.4g}{s.median:>12.4g}"
                    f"{s.q3:>12.4g}{s.max:>12.4g}{s.mean_square:>12.4g}")
    return "\n".join(rows)


@dataclass(frozen=True)
class PilotReport:
    stats: dict[str, VariantStats]
    outputs: dict[str, np.ndarray]

    def table(self) -> str:
        return _stats_table(list(self.stats.values()))

    def csv(self) -> str:
        lines = ["variant,min,q1,median,q3,max,mean_square"]
        lines += [s.csv_row() for s in self.stats.values()]
        return "\n".join(lines)


def activation_pilot(seed: int, *, in_dim: int = PILOT_IN_DIM, out_dim: int = PILOT_OUT_DIM,
                     batch: int = PILOT_BATCH, rms_eps: float = 1e-5) -> PilotReport:
    """Compare activations through ternary / ternary+RMS / full-precision layers.

    All three variants share one weight draw (normal, std 1/sqrt(in_dim))
    from the given seed and receive the same all-ones input. The ternary
    variants use a randomly initialized scale of order one, which is exactly
    what makes the unnormalized ternary activations blow up relative to the
    full-precision reference.
    """
    rng = np.random.default_rng(seed)
    std = 1.0 / math.sqrt(in_dim)
    w = rng.normal(0.0, std, (out_dim, in_dim)).astype(np.float32)
    alpha = tq.init_alpha(rng)
    x = np.ones((batch, in_dim), dtype=np.float32)

    t = tq.ternarize(w, alpha)
    y_ternary = x @ t.effective_weights().T
    ms = (y_ternary.astype(np.float64) ** 2).mean(axis=-1, keepdims=True)
    y_rms = (y_ternary / np.sqrt(ms + rms_eps)).astype(np.float32)
    y_full = x @ w.T

    outputs = {"ternary": y_ternary, "ternary_rms": y_rms, "full_precision": y_full}
    stats = {name: VariantStats.of(name, y) for name, y in outputs.items()}
    return PilotReport(stats=stats, outputs=outputs)


def activation_capture(model: DiT, block_index: int, site: str, t: int, label: int, *,
                       cfg_scale: float = 4.0,
                       rng: np.random.Generator | None = None) -> tuple[VariantStats, np.ndarray]:
    """Distribution of one modulation chunk during a guided denoising step.

    Runs the conditional and unconditional branches of one reverse step at
    timestep ``t`` on a fresh noise draw and captures the requested chunk
    (e.g. ``scale_mlp``) from the conditional branch of the given block.
    Capture is read-only: predictions are unaffected.
    """
    if site not in MODULATION_SITES:
        raise ValueError(f"unknown site {site!r}; expected one of {MODULATION_SITES}")
    if not 0 <= block_index < model.cfg.depth:
        raise ValueError(f"block index {block_index} out of range [0, {model.cfg.depth})")
    rng = rng if rng is not None else np.random.default_rng(0)
    x = rng.standard_normal(
        (1, model.cfg.channels, model.cfg.image_size, model.cfg.image_size)
    ).astype(np.float32)
    capture: dict = {"block": block_index, "site": site}
    labels = np.asarray([label])
    model.predict_noise(x, t, labels, np.asarray([False]), capture=capture)
    if cfg_scale != 1.0:
        model.predict_noise(x, t, labels, np.asarray([True]))
    vec = capture["value"].ravel()
    return VariantStats.of(site, vec), vec


@dataclass(frozen=True)
class TensorSizeRow:
    name: str
    params: int
    ternary: bool
    dense_bytes: int
    deployed_bytes: int  # payload bytes in the packed checkpoint


@dataclass(frozen=True)
class SizeReport:
    """Dense vs packed storage accounting for one model."""

    rows: list[TensorSizeRow]
    fp_bytes: int
    packed_bytes: int
    packed_payload_bytes: int
    packed_meta_bytes: int

    @property
    def ratio(self) -> float:
        return self.fp_bytes / self.packed_bytes

    def table(self) -> str:
        header = f"{'tensor':<28}{'params':>12}{'dense':>12}{'packed':>12}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            tag = "T" if r.ternary else " "
            lines.append(f"{r.name:<26}{tag} {r.params:>12}{r.dense_bytes:>12}{r.deployed_bytes:>12}")
        lines.append("-" * len(header))
        lines.append(f"{'total':<28}{sum(r.params for r in self.rows):>12}"
                     f"{self.fp_bytes:>12}{self.packed_bytes:>12}")
        lines.append(f"compression ratio: {self.ratio:.2f}x "
                     f"(packed meta {self.packed_meta_bytes} B included)")
        return "\n".join(lines)


def size_report(cfg: ModelConfig) -> SizeReport:
    """Analytic accounting from a config; nothing is allocated.

    The alpha scalars are dense rank-0 tensors in the master checkpoint; the
    packed form carries them as per-tensor metadata, so they contribute to
    ``packed_meta_bytes`` rather than a payload row of their own.
    """
    rows = []
    meta = 0
    for spec in parameter_specs(cfg):
        dense = 4 * spec.size
        if spec.ternary:
            deployed = packed_nbytes(spec.size)
            meta += PACKED_META_BYTES
        elif spec.name.endswith(".alpha"):
            deployed = 0
        else:
            deployed = dense
        rows.append(TensorSizeRow(spec.name, spec.size, spec.ternary, dense, deployed))
    fp_bytes = sum(r.dense_bytes for r in rows)
    payload = sum(r.deployed_bytes for r in rows)
    return SizeReport(rows=rows, fp_bytes=fp_bytes, packed_bytes=payload + meta,
                      packed_payload_bytes=payload, packed_meta_bytes=meta)


def size_report_from_checkpoint(ckpt: Checkpoint) -> SizeReport:
    """Accounting from concrete tensors (dense master or packed checkpoint)."""
    if ckpt.has_packed:
        rows = []
        meta = 0
        fp_bytes = 0
        for name, value in ckpt.tensors:
            if isinstance(value, PackedTernary):
                m, n = value.shape
                params = m * n
                rows.append(TensorSizeRow(name, params, True, 4 * params, value.nbytes))
                fp_bytes += 4 * params + 4  # dense form also stored this tensor's alpha
                meta += PACKED_META_BYTES
            else:
                size = int(np.asarray(value).size)
                rows.append(TensorSizeRow(name, size, False, 4 * size, 4 * size))
                fp_bytes += 4 * size
        payload = sum(r.deployed_bytes for r in rows)
        return SizeReport(rows=rows, fp_bytes=fp_bytes, packed_bytes=payload + meta,
                          packed_payload_bytes=payload, packed_meta_bytes=meta)
    return size_report(ModelConfig.from_text(ckpt.config_text))
