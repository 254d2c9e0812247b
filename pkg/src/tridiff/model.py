"""Toy class-conditional diffusion transformer with ternary block weights.

The block follows the adaLN-Zero wiring: per-block modulation (shift, scale,
gate for both the attention and feedforward branches) is produced from the
condition embedding by an MLP that, like every linear inside a block, can be
ternarized. The ``adaln_rms`` switch inserts a single RMS normalization over
the modulation output before it is chunked, which bounds the shift/scale
magnitudes a ternary modulation projection would otherwise produce.

Everything outside the blocks (patch embedding, positional table, timestep
and label embedders, final decoder) stays full precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import ternary as tq
from .autograd import Tensor
from .bitpack import PackedTernary, unpack_matrix

__all__ = [
    "ModelConfig",
    "ParamSpec",
    "parameter_specs",
    "DiT",
    "patchify",
    "unpatchify",
    "MODULATION_SITES",
    "DEFAULT_NUM_TIMESTEPS",
]

DEFAULT_NUM_TIMESTEPS = 1000

MODULATION_SITES = ("shift_msa", "scale_msa", "gate_msa", "shift_mlp", "scale_mlp", "gate_mlp")

_CONFIG_KEYS = (
    "image_size",
    "channels",
    "patch_size",
    "hidden_dim",
    "depth",
    "num_heads",
    "num_classes",
    "adaln_rms",
    "quantize_blocks",
    "rms_eps",
    "class_dropout_prob",
)


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of the toy diffusion transformer."""

    image_size: int = 16
    channels: int = 3
    patch_size: int = 2
    hidden_dim: int = 128
    depth: int = 4
    num_heads: int = 4
    num_classes: int = 8
    adaln_rms: bool = True
    quantize_blocks: bool = True
    rms_eps: float = 1e-5
    class_dropout_prob: float = 0.1

    def __post_init__(self):
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.image_size % self.patch_size != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if not 0.0 <= self.class_dropout_prob <= 1.0:
            raise ValueError(f"class_dropout_prob must be in [0,1], got {self.class_dropout_prob}")
        if not self.rms_eps > 0:
            raise ValueError(f"rms_eps must be positive, got {self.rms_eps}")

    @property
    def num_tokens(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size**2

    @property
    def ffn_dim(self) -> int:
        return 4 * self.hidden_dim

    @property
    def freq_dim(self) -> int:
        d = min(256, self.hidden_dim)
        return d - d % 2

    def to_text(self) -> str:
        """Render as the key=value config text embedded in checkpoints."""
        lines = []
        for key in _CONFIG_KEYS:
            value = getattr(self, key)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        values: dict[str, object] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in _CONFIG_KEYS:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            if key in ("adaln_rms", "quantize_blocks"):
                if raw not in ("true", "false"):
                    raise ValueError(f"config line {lineno}: {key} must be true or false")
                values[key] = raw == "true"
            elif key in ("rms_eps", "class_dropout_prob"):
                values[key] = float(raw)
            else:
                values[key] = int(raw)
        missing = [k for k in _CONFIG_KEYS if k not in values]
        if missing:
            raise ValueError(f"config missing keys: {', '.join(missing)}")
        return cls(**values)  # type: ignore[arg-type]


@dataclass(frozen=True)
class ParamSpec:
    """Name, shape, and role of one parameter tensor."""

    name: str
    shape: tuple[int, ...]
    ternary: bool = False  # True marks a quantized master weight matrix

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


def parameter_specs(cfg: ModelConfig) -> list[ParamSpec]:
    """The full parameter census, without allocating anything.

    Mirrors the model structure exactly; used for analytic size accounting
    and asserted against the instantiated model in tests.
    """
    h, f = cfg.hidden_dim, cfg.ffn_dim
    specs: list[ParamSpec] = [
        ParamSpec("patch_embed.weight", (h, cfg.patch_dim)),
        ParamSpec("patch_embed.bias", (h,)),
        ParamSpec("pos_embed", (cfg.num_tokens, h)),
        ParamSpec("t_embed.fc1.weight", (h, cfg.freq_dim)),
        ParamSpec("t_embed.fc1.bias", (h,)),
        ParamSpec("t_embed.fc2.weight", (h, h)),
        ParamSpec("t_embed.fc2.bias", (h,)),
        ParamSpec("label_embed.table", (cfg.num_classes + 1, h)),
    ]
    q = cfg.quantize_blocks
    for i in range(cfg.depth):
        b = f"blocks.{i}"
        specs.append(ParamSpec(f"{b}.norm_attn.gain", (h,)))
        for proj in ("wq", "wk", "wv", "wo"):
            specs.append(ParamSpec(f"{b}.attn.{proj}.weight", (h, h), ternary=q))
            if q:
                specs.append(ParamSpec(f"{b}.attn.{proj}.alpha", ()))
        specs.append(ParamSpec(f"{b}.norm_ffn.gain", (h,)))
        for proj, shape in (("w_gate", (f, h)), ("w_up", (f, h)), ("w_down", (h, f))):
            specs.append(ParamSpec(f"{b}.ffn.{proj}.weight", shape, ternary=q))
            if q:
                specs.append(ParamSpec(f"{b}.ffn.{proj}.alpha", ()))
        specs.append(ParamSpec(f"{b}.mod.weight", (6 * h, h), ternary=q))
        if q:
            specs.append(ParamSpec(f"{b}.mod.alpha", ()))
        specs.append(ParamSpec(f"{b}.mod.bias", (6 * h,)))
        if cfg.adaln_rms:
            specs.append(ParamSpec(f"{b}.mod_norm.gain", (6 * h,)))
    specs += [
        ParamSpec("final.norm.gain", (h,)),
        ParamSpec("final.mod.weight", (2 * h, h)),
        ParamSpec("final.mod.bias", (2 * h,)),
        ParamSpec("final.decoder.weight", (cfg.patch_dim, h)),
        ParamSpec("final.decoder.bias", (cfg.patch_dim,)),
    ]
    return specs


def patchify(x, patch_size: int):
    """(B, C, H, W) images to (B, tokens, patch_size^2 * C) token sequences."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    b, c, height, width = x.shape
    if height % patch_size or width % patch_size:
        raise ValueError(f"image {height}x{width} not divisible by patch size {patch_size}")
    gh, gw = height // patch_size, width // patch_size
    x = ag.reshape(x, (b, c, gh, patch_size, gw, patch_size))
    x = ag.transpose(x, (0, 2, 4, 3, 5, 1))  # (B, gh, gw, p, p, C)
    return ag.reshape(x, (b, gh * gw, patch_size * patch_size * c))


def unpatchify(tokens, patch_size: int, channels: int, image_size: int):
    """Exact inverse of :func:`patchify`."""
    tokens = tokens if isinstance(tokens, Tensor) else Tensor(np.asarray(tokens))
    b, t, d = tokens.shape
    gh = gw = image_size // patch_size
    if t != gh * gw or d != channels * patch_size**2:
        raise ValueError(f"token sequence {tokens.shape} does not match the image geometry")
    x = ag.reshape(tokens, (b, gh, gw, patch_size, patch_size, channels))
    x = ag.transpose(x, (0, 5, 1, 3, 2, 4))  # (B, C, gh, p, gw, p)
    return ag.reshape(x, (b, channels, image_size, image_size))


def sinusoidal_embedding(t: np.ndarray, dim: int, dtype=np.float32, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal features of integer timesteps, cosines first: (B, dim)."""
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=-1).astype(dtype)


class Linear:
    """Full-precision affine layer."""

    def __init__(self, in_features: int, out_features: int, *, bias: bool = True,
                 rng: np.random.Generator | None = None, zero_init: bool = False,
                 dtype=np.float32):
        if zero_init:
            w = np.zeros((out_features, in_features), dtype=dtype)
        else:
            std = 1.0 / math.sqrt(in_features)
            w = rng.normal(0.0, std, (out_features, in_features)).astype(dtype)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x):
        return ag.linear(x, self.weight, self.bias)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {f"{prefix}.weight": self.weight}
        if self.bias is not None:
            params[f"{prefix}.bias"] = self.bias
        return params


class TernaryLayer:
    """Linear layer whose weights are ternarized on every forward pass.

    Holds full-precision master weights plus the learnable scale alpha. In
    packed deployment the masters are absent and the frozen trit codes are
    applied directly; both paths share the same matmul, so a packed model
    reproduces the quantized-master model bit-exactly.
    """

    def __init__(self, in_features: int, out_features: int, *, bias: bool = False,
                 rng: np.random.Generator | None = None, zero_init: bool = False,
                 qcfg: tq.QuantConfig = tq.DEFAULT_QUANT_CONFIG, dtype=np.float32):
        std = 1.0 / math.sqrt(in_features)
        if zero_init:
            w = np.zeros((out_features, in_features), dtype=dtype)
        else:
            w = rng.normal(0.0, std, (out_features, in_features)).astype(dtype)
        self.weight = Tensor(w, requires_grad=True)
        self.alpha = Tensor(np.asarray(tq.init_alpha(rng), dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True) if bias else None
        self.qcfg = qcfg
        self.frozen_codes: np.ndarray | None = None
        self.out_features = out_features
        self.in_features = in_features

    def freeze(self, packed: PackedTernary, dtype=np.float32) -> None:
        """Switch to deployment mode: apply stored codes, drop the masters."""
        if packed.shape != (self.out_features, self.in_features):
            raise ValueError(f"packed shape {packed.shape} does not match layer "
                             f"({self.out_features}, {self.in_features})")
        self.frozen_codes = unpack_matrix(packed)
        self.alpha = Tensor(np.asarray(packed.alpha, dtype=dtype))
        self.weight = None

    def __call__(self, x):
        if self.frozen_codes is not None:
            x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
            x2 = x.data.reshape(-1, self.in_features)
            y2 = ag.ternary_matmul(
                x2, self.frozen_codes, float(self.alpha.data),
                self.bias.data if self.bias is not None else None,
            )
            return Tensor(y2.reshape(*x.data.shape[:-1], self.out_features))
        return ag.ternary_linear(x, self.weight, self.alpha, self.bias, self.qcfg)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        if self.frozen_codes is not None:
            params = {}
        else:
            params = {f"{prefix}.weight": self.weight, f"{prefix}.alpha": self.alpha}
        if self.bias is not None:
            params[f"{prefix}.bias"] = self.bias
        return params


class RMSNorm:
    def __init__(self, dim: int, eps: float, dtype=np.float32):
        self.gain = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        return ag.rms_norm(x, self.gain, self.eps)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gain": self.gain}


def _make_linear(cfg: ModelConfig, in_f: int, out_f: int, *, bias: bool, rng,
                 zero_init: bool = False, dtype=np.float32):
    if cfg.quantize_blocks:
        return TernaryLayer(in_f, out_f, bias=bias, rng=rng, zero_init=zero_init, dtype=dtype)
    return Linear(in_f, out_f, bias=bias, rng=rng, zero_init=zero_init, dtype=dtype)


class Attention:
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        h = cfg.hidden_dim
        self.num_heads = cfg.num_heads
        self.head_dim = h // cfg.num_heads
        self.wq = _make_linear(cfg, h, h, bias=False, rng=rng, dtype=dtype)
        self.wk = _make_linear(cfg, h, h, bias=False, rng=rng, dtype=dtype)
        self.wv = _make_linear(cfg, h, h, bias=False, rng=rng, dtype=dtype)
        self.wo = _make_linear(cfg, h, h, bias=False, rng=rng, dtype=dtype)

    def __call__(self, x):
        b, t, h = x.shape
        nh, hd = self.num_heads, self.head_dim

        def heads(z):
            return ag.transpose(ag.reshape(z, (b, t, nh, hd)), (0, 2, 1, 3))

        q, k, v = heads(self.wq(x)), heads(self.wk(x)), heads(self.wv(x))
        scores = ag.mul(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
        attn = ag.softmax(scores, axis=-1)
        out = ag.matmul(attn, v)
        out = ag.reshape(ag.transpose(out, (0, 2, 1, 3)), (b, t, h))
        return self.wo(out)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {}
        for name in ("wq", "wk", "wv", "wo"):
            params.update(getattr(self, name).named_parameters(f"{prefix}.{name}"))
        return params


class FeedForward:
    """Gated-linear-unit feedforward: down(silu(gate(x)) * up(x))."""

    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        h, f = cfg.hidden_dim, cfg.ffn_dim
        self.w_gate = _make_linear(cfg, h, f, bias=False, rng=rng, dtype=dtype)
        self.w_up = _make_linear(cfg, h, f, bias=False, rng=rng, dtype=dtype)
        self.w_down = _make_linear(cfg, f, h, bias=False, rng=rng, dtype=dtype)

    def __call__(self, x):
        return self.w_down(ag.mul(ag.silu(self.w_gate(x)), self.w_up(x)))

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {}
        for name in ("w_gate", "w_up", "w_down"):
            params.update(getattr(self, name).named_parameters(f"{prefix}.{name}"))
        return params


def _modulate(x, shift, scale):
    b, h = shift.shape
    one_plus = ag.add(ag.reshape(scale, (b, 1, h)), 1.0)
    return ag.add(ag.mul(x, one_plus), ag.reshape(shift, (b, 1, h)))


class DiTBlock:
    """Pre-norm transformer block with adaLN-Zero conditioning."""

    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        h = cfg.hidden_dim
        self.norm_attn = RMSNorm(h, cfg.rms_eps, dtype=dtype)
        self.attn = Attention(cfg, rng, dtype=dtype)
        self.norm_ffn = RMSNorm(h, cfg.rms_eps, dtype=dtype)
        self.ffn = FeedForward(cfg, rng, dtype=dtype)
        # adaLN-Zero: zero-initialized modulation projection; under
        # ternarization the all-zero masters quantize to all-zero codes, so
        # the block still starts as an exact identity
        self.mod = _make_linear(cfg, h, 6 * h, bias=True, rng=rng, zero_init=True, dtype=dtype)
        self.mod_norm = RMSNorm(6 * h, cfg.rms_eps, dtype=dtype) if cfg.adaln_rms else None
        self.hidden_dim = h

    def modulation(self, c, capture_site: str | None = None):
        """Six (B, hidden) modulation vectors from the condition embedding."""
        mod = self.mod(ag.silu(c))
        if self.mod_norm is not None:
            mod = self.mod_norm(mod)
        h = self.hidden_dim
        chunks = {site: ag.narrow(mod, -1, i * h, h) for i, site in enumerate(MODULATION_SITES)}
        captured = chunks[capture_site].data.copy() if capture_site is not None else None
        return chunks, captured

    def __call__(self, x, c, capture_site: str | None = None):
        b, t, h = x.shape
        mods, captured = self.modulation(c, capture_site)
        att = self.attn(_modulate(self.norm_attn(x), mods["shift_msa"], mods["scale_msa"]))
        x = ag.add(x, ag.mul(ag.reshape(mods["gate_msa"], (b, 1, h)), att))
        ff = self.ffn(_modulate(self.norm_ffn(x), mods["shift_mlp"], mods["scale_mlp"]))
        x = ag.add(x, ag.mul(ag.reshape(mods["gate_mlp"], (b, 1, h)), ff))
        return x, captured

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {}
        params.update(self.norm_attn.named_parameters(f"{prefix}.norm_attn"))
        params.update(self.attn.named_parameters(f"{prefix}.attn"))
        params.update(self.norm_ffn.named_parameters(f"{prefix}.norm_ffn"))
        params.update(self.ffn.named_parameters(f"{prefix}.ffn"))
        params.update(self.mod.named_parameters(f"{prefix}.mod"))
        if self.mod_norm is not None:
            params.update(self.mod_norm.named_parameters(f"{prefix}.mod_norm"))
        return params


class TimestepEmbedder:
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        self.freq_dim = cfg.freq_dim
        self.fc1 = Linear(cfg.freq_dim, cfg.hidden_dim, rng=rng, dtype=dtype)
        self.fc2 = Linear(cfg.hidden_dim, cfg.hidden_dim, rng=rng, dtype=dtype)
        self.dtype = dtype

    def __call__(self, t: np.ndarray):
        sinus = sinusoidal_embedding(t, self.freq_dim, dtype=self.dtype)
        return self.fc2(ag.silu(self.fc1(Tensor(sinus))))

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        params = self.fc1.named_parameters(f"{prefix}.fc1")
        params.update(self.fc2.named_parameters(f"{prefix}.fc2"))
        return params


class LabelEmbedder:
    """Class-label lookup with an extra null row for classifier-free guidance."""

    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        self.num_classes = cfg.num_classes
        table = rng.normal(0.0, 0.02, (cfg.num_classes + 1, cfg.hidden_dim)).astype(dtype)
        self.table = Tensor(table, requires_grad=True)

    def __call__(self, labels: np.ndarray, drop: np.ndarray):
        labels = np.asarray(labels)
        drop = np.asarray(drop, dtype=bool)
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"label out of range [0, {self.num_classes})")
        idx = np.where(drop, self.num_classes, labels)
        return ag.embedding(self.table, idx)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.table": self.table}


class FinalLayer:
    """adaLN-modulated linear decoder back to patch pixels."""

    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        h = cfg.hidden_dim
        self.norm = RMSNorm(h, cfg.rms_eps, dtype=dtype)
        self.mod = Linear(h, 2 * h, rng=rng, zero_init=True, dtype=dtype)
        self.decoder = Linear(h, cfg.patch_dim, rng=rng, zero_init=True, dtype=dtype)
        self.hidden_dim = h

    def __call__(self, x, c):
        h = self.hidden_dim
        mod = self.mod(ag.silu(c))
        shift = ag.narrow(mod, -1, 0, h)
        scale = ag.narrow(mod, -1, h, h)
        return self.decoder(_modulate(self.norm(x), shift, scale))

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        params = self.norm.named_parameters(f"{prefix}.norm")
        params.update(self.mod.named_parameters(f"{prefix}.mod"))
        params.update(self.decoder.named_parameters(f"{prefix}.decoder"))
        return params


class DiT:
    """The toy diffusion transformer: predicts the noise added to an image."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, *, dtype=np.float32,
                 num_timesteps: int = DEFAULT_NUM_TIMESTEPS,
                 rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.dtype = dtype
        self.num_timesteps = num_timesteps
        rng = rng if rng is not None else np.random.default_rng(seed)
        self.patch_embed = Linear(cfg.patch_dim, cfg.hidden_dim, rng=rng, dtype=dtype)
        pos = rng.normal(0.0, 0.02, (cfg.num_tokens, cfg.hidden_dim)).astype(dtype)
        self.pos_embed = Tensor(pos, requires_grad=True)
        self.t_embed = TimestepEmbedder(cfg, rng, dtype=dtype)
        self.label_embed = LabelEmbedder(cfg, rng, dtype=dtype)
        self.blocks = [DiTBlock(cfg, rng, dtype=dtype) for _ in range(cfg.depth)]
        self.final = FinalLayer(cfg, rng, dtype=dtype)

    # ---- forward -----------------------------------------------------

    def condition(self, t: np.ndarray, labels: np.ndarray, drop: np.ndarray):
        t = np.atleast_1d(np.asarray(t))
        if t.min() < 0 or t.max() >= self.num_timesteps:
            raise ValueError(f"timestep out of range [0, {self.num_timesteps})")
        return ag.add(self.t_embed(t), self.label_embed(labels, drop))

    def forward(self, x, t, labels, drop, capture: dict | None = None):
        """Noise prediction with the same shape as the input batch.

        ``capture``, when given, is a dict with keys ``block`` and ``site``;
        the requested modulation chunk is copied into ``capture["value"]``
        without affecting the output.
        """
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        b, c, height, width = x.shape
        if (c, height, width) != (self.cfg.channels, self.cfg.image_size, self.cfg.image_size):
            raise ValueError(f"input shape {x.shape} does not match the model config")
        cap_block, cap_site = -1, None
        if capture is not None:
            cap_block, cap_site = capture["block"], capture["site"]
            if not 0 <= cap_block < self.cfg.depth:
                raise ValueError(f"capture block {cap_block} out of range")
            if cap_site not in MODULATION_SITES:
                raise ValueError(f"unknown capture site {cap_site!r}")

        cond = self.condition(t, labels, drop)
        tokens = ag.add(self.patch_embed(patchify(x, self.cfg.patch_size)), self.pos_embed)
        for i, block in enumerate(self.blocks):
            tokens, captured = block(tokens, cond, cap_site if i == cap_block else None)
            if captured is not None:
                capture["value"] = captured
        out = self.final(tokens, cond)
        return unpatchify(out, self.cfg.patch_size, self.cfg.channels, self.cfg.image_size)

    def predict_noise(self, x: np.ndarray, t, labels, drop, capture: dict | None = None) -> np.ndarray:
        """Inference-only forward returning a plain array."""
        t = np.broadcast_to(np.asarray(t), (x.shape[0],))
        labels = np.broadcast_to(np.asarray(labels), (x.shape[0],))
        drop = np.broadcast_to(np.asarray(drop, dtype=bool), (x.shape[0],))
        with ag.no_grad():
            return self.forward(x, t, labels, drop, capture).data

    # ---- parameter access ---------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        params = self.patch_embed.named_parameters("patch_embed")
        params["pos_embed"] = self.pos_embed
        params.update(self.t_embed.named_parameters("t_embed"))
        params.update(self.label_embed.named_parameters("label_embed"))
        for i, block in enumerate(self.blocks):
            params.update(block.named_parameters(f"blocks.{i}"))
        params.update(self.final.named_parameters("final"))
        return params

    def ternary_layers(self) -> dict[str, TernaryLayer]:
        """Prefix -> layer for every quantized projection in the blocks."""
        layers: dict[str, TernaryLayer] = {}
        if not self.cfg.quantize_blocks:
            return layers
        for i, block in enumerate(self.blocks):
            b = f"blocks.{i}"
            for name in ("wq", "wk", "wv", "wo"):
                layers[f"{b}.attn.{name}"] = getattr(block.attn, name)
            for name in ("w_gate", "w_up", "w_down"):
                layers[f"{b}.ffn.{name}"] = getattr(block.ffn, name)
            layers[f"{b}.mod"] = block.mod
        return layers

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Master parameter values keyed by name (for checkpointing)."""
        return {name: p.data for name, p in self.named_parameters().items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        unknown = set(arrays) - set(params)
        if missing or unknown:
            problems = []
            if missing:
                problems.append(f"missing: {sorted(missing)[:4]}")
            if unknown:
                problems.append(f"unknown: {sorted(unknown)[:4]}")
            raise ValueError("state does not match model (" + "; ".join(problems) + ")")
        for name, p in params.items():
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()
