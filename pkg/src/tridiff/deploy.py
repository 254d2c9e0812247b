"""Checkpoint construction, packing, and model loading.

A master checkpoint stores every parameter dense (float32), including each
ternary layer's scale as a rank-0 tensor named ``<layer>.alpha``. Packing
ternarizes each quantized master exactly once and replaces the
weight/alpha pair with a single 2-bit payload carrying the scale; since the
quantizer is deterministic, a packed model reproduces the quantized-master
model's outputs bit-exactly.
"""

from __future__ import annotations

import numpy as np

from . import ternary as tq
from .bitpack import PackedTernary, pack_matrix
from .checkpoint import Checkpoint, CheckpointError, deserialize, serialize
from .model import DiT, ModelConfig, parameter_specs

__all__ = [
    "master_checkpoint",
    "ema_checkpoint",
    "pack_checkpoint",
    "load_model",
    "save_checkpoint",
    "load_checkpoint",
]


def master_checkpoint(model: DiT) -> Checkpoint:
    """Snapshot the full-precision masters (training / conversion form)."""
    ckpt = Checkpoint(config_text=model.cfg.to_text())
    for name, value in model.state_arrays().items():
        ckpt.add(name, value)
    return ckpt


def ema_checkpoint(model: DiT, ema: dict[str, np.ndarray]) -> Checkpoint:
    """Snapshot the EMA shadow parameters in master-checkpoint form."""
    ckpt = Checkpoint(config_text=model.cfg.to_text())
    for name in model.state_arrays():
        ckpt.add(name, ema[name])
    return ckpt


def pack_checkpoint(ckpt: Checkpoint) -> Checkpoint:
    """Convert a dense master checkpoint into packed deployment form.

    Every ternary master is quantized once and stored as 2-bit codes plus its
    scale; all other tensors are copied dense. Refuses checkpoints that
    already contain packed tensors.
    """
    if ckpt.has_packed:
        raise CheckpointError("checkpoint is already packed")
    cfg = ModelConfig.from_text(ckpt.config_text)
    ternary_weights = {s.name for s in parameter_specs(cfg) if s.ternary}
    out = Checkpoint(config_text=ckpt.config_text)
    for name, value in ckpt.tensors:
        if name in ternary_weights:
            prefix = name.removesuffix(".weight")
            alpha = float(np.asarray(ckpt.get(f"{prefix}.alpha")))
            t = tq.ternarize(np.asarray(value), alpha)
            out.add(name, pack_matrix(t.codes, t.alpha))
        elif name.endswith(".alpha") and f"{name.removesuffix('.alpha')}.weight" in ternary_weights:
            continue  # carried inside the packed tensor
        else:
            out.add(name, value)
    return out


def load_model(ckpt: Checkpoint, *, seed: int = 0, num_timesteps: int | None = None) -> DiT:
    """Instantiate a model from a checkpoint, dense or packed."""
    cfg = ModelConfig.from_text(ckpt.config_text)
    kwargs = {} if num_timesteps is None else {"num_timesteps": num_timesteps}
    model = DiT(cfg, seed=seed, **kwargs)
    if not ckpt.has_packed:
        model.load_state({name: np.asarray(v) for name, v in ckpt.tensors})
        return model

    layers = model.ternary_layers()
    dense: dict[str, np.ndarray] = {}
    for name, value in ckpt.tensors:
        if isinstance(value, PackedTernary):
            prefix = name.removesuffix(".weight")
            if prefix not in layers:
                raise CheckpointError(f"packed tensor {name!r} does not match a ternary layer")
            layers[prefix].freeze(value)
        else:
            dense[name] = np.asarray(value)
    params = model.named_parameters()  # frozen layers no longer expose weight/alpha
    missing = set(params) - set(dense)
    unknown = set(dense) - set(params)
    if missing or unknown:
        raise CheckpointError(
            f"packed checkpoint does not match model (missing {sorted(missing)[:4]}, "
            f"unknown {sorted(unknown)[:4]})"
        )
    for name, p in params.items():
        arr = dense[name].astype(p.data.dtype)
        if arr.shape != p.data.shape:
            raise CheckpointError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
        p.data = arr.copy()
    return model


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(ckpt))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
