"""Ternary-weight diffusion transformers, trained and deployed at 2 bits.

The package covers the full path from quantization-aware training to packed
inference: absmean ternary quantization with a learnable per-matrix scale
(:mod:`tridiff.ternary`), a toy class-conditional diffusion transformer with
optional RMS-normalized adaLN conditioning (:mod:`tridiff.model`), the DDPM
process and classifier-free guidance (:mod:`tridiff.diffusion`), the
straight-through-estimator training loop (:mod:`tridiff.train`), bit-exact
2-bit weight packing and checkpointing (:mod:`tridiff.bitpack`,
:mod:`tridiff.checkpoint`, :mod:`tridiff.deploy`), and the activation/size
diagnostics (:mod:`tridiff.diagnostics`).
"""

from .autograd import Tensor, no_grad
from .bitpack import PackedTernary, pack, packed_linear, unpack
from .checkpoint import Checkpoint, deserialize, serialize
from .diffusion import NoiseSchedule, cfg_combine, ddpm_sample, q_sample, training_loss
from .model import DiT, ModelConfig
from .ternary import QuantConfig, TernaryTensor, absmean_gamma, round_clip, ste_backward, ternarize
from .train import TrainConfig, TrainState, lr_at, qat_step, smoothed_loss, train

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "no_grad",
    "PackedTernary",
    "pack",
    "unpack",
    "packed_linear",
    "Checkpoint",
    "serialize",
    "deserialize",
    "NoiseSchedule",
    "q_sample",
    "training_loss",
    "cfg_combine",
    "ddpm_sample",
    "DiT",
    "ModelConfig",
    "QuantConfig",
    "TernaryTensor",
    "absmean_gamma",
    "round_clip",
    "ternarize",
    "ste_backward",
    "TrainConfig",
    "TrainState",
    "lr_at",
    "smoothed_loss",
    "qat_step",
    "train",
]
