"""Absmean ternary weight quantization with a learnable per-matrix scale.

A weight matrix W is normalized by the mean absolute value of its entries,
rounded to the nearest integer with ties away from zero, and clamped into
{-1, 0, +1}. The resulting trit codes are scaled by a learnable positive
scalar alpha, so every effective weight lies in {-alpha, 0, +alpha}.

Training keeps full-precision master weights: the forward pass quantizes
them on the fly, and the backward pass routes the gradient of the quantized
weights straight through to the masters (straight-through estimator).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuantConfig",
    "TernaryTensor",
    "absmean_gamma",
    "round_clip",
    "ternarize",
    "ste_backward",
    "init_alpha",
]


@dataclass(frozen=True)
class QuantConfig:
    """Quantizer settings: the divide-by-zero guard and the tie-break rule.

    ``rounding`` is an identifier, not a switch: only half-away-from-zero is
    implemented, and the field exists so checkpoints/configs can state it.
    """

    epsilon: float = 1e-6
    rounding: str = "half-away-from-zero"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.rounding != "half-away-from-zero":
            raise ValueError(f"unsupported rounding rule: {self.rounding!r}")


DEFAULT_QUANT_CONFIG = QuantConfig()


@dataclass(frozen=True)
class TernaryTensor:
    """The quantized image of a weight matrix: trit codes plus a scale.

    ``codes`` is an int8 matrix with entries in {-1, 0, +1}; ``alpha`` is a
    positive scalar in the units of the original weights. The effective
    weight matrix is ``alpha * codes`` elementwise, so every entry lies in
    {-alpha, 0, +alpha}. Instances are immutable and safe to share.
    """

    codes: np.ndarray
    alpha: float

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.ndim != 2:
            raise ValueError(f"codes must be a matrix, got ndim={codes.ndim}")
        if codes.dtype == np.int8:
            # hot path (every quantized forward): integer trits, cheap bound check
            if codes.size and np.abs(codes).max() > 1:
                raise ValueError("codes contain values outside {-1, 0, +1}")
        else:
            if codes.size and not np.isin(codes, (-1, 0, 1)).all():
                raise ValueError("codes contain values outside {-1, 0, +1}")
            codes = codes.astype(np.int8)
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)
        alpha = float(self.alpha)
        if not (np.isfinite(alpha) and alpha > 0):
            raise ValueError(f"alpha must be positive and finite, got {alpha}")
        object.__setattr__(self, "alpha", alpha)

    @property
    def shape(self) -> tuple[int, int]:
        return self.codes.shape

    def effective_weights(self, dtype=np.float32) -> np.ndarray:
        """Materialize ``alpha * codes`` in the requested floating dtype."""
        return np.asarray(self.alpha, dtype=dtype) * self.codes.astype(dtype)


def absmean_gamma(w: np.ndarray) -> float:
    """Mean absolute value of all entries of ``w``.

    Zero only for an all-zero matrix. Raises on empty or non-finite input.
    """
    w = np.asarray(w)
    if w.size == 0:
        raise ValueError("absmean of an empty matrix is undefined")
    if not np.isfinite(w).all():
        raise ValueError("absmean requires finite entries")
    return float(np.abs(w).mean(dtype=w.dtype if w.dtype.kind == "f" else np.float64))


def round_clip(x, a, b):
    """Round to the nearest integer (ties away from zero), then clamp to [a, b].

    Accepts scalars or arrays; total on finite reals.
    """
    if a > b:
        raise ValueError(f"invalid clamp range [{a}, {b}]")
    x = np.asarray(x)
    rounded = np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))
    clipped = np.clip(rounded, a, b)
    if clipped.ndim == 0:
        return float(clipped)
    return clipped


def ternarize(w: np.ndarray, alpha: float, cfg: QuantConfig = DEFAULT_QUANT_CONFIG) -> TernaryTensor:
    """Quantize a weight matrix to trit codes via absmean normalization.

    codes[i,j] = round_clip(w[i,j] / (gamma + epsilon), -1, +1) with
    gamma = absmean_gamma(w). The master weights ``w`` are not modified;
    ``alpha`` is stored on the result unchanged.
    """
    w = np.asarray(w)
    if w.ndim != 2:
        raise ValueError(f"expected a weight matrix, got ndim={w.ndim}")
    gamma = absmean_gamma(w)  # also validates finiteness / non-emptiness
    denom = gamma + cfg.epsilon
    codes = round_clip(w / denom, -1, 1).astype(np.int8)
    return TernaryTensor(codes=codes, alpha=alpha)


def ste_backward(grad_wtilde: np.ndarray, t: TernaryTensor) -> tuple[np.ndarray, float]:
    """Backward pass of the quantizer under the straight-through estimator.

    The gradient with respect to the master weights is the gradient of the
    effective weights, passed through unchanged (identity). The gradient with
    respect to alpha is exact, since the effective weights are linear in
    alpha at fixed codes: sum(grad_wtilde * codes).
    """
    grad_wtilde = np.asarray(grad_wtilde)
    if grad_wtilde.shape != t.codes.shape:
        raise ValueError(
            f"gradient shape {grad_wtilde.shape} does not match codes shape {t.codes.shape}"
        )
    grad_alpha = float((grad_wtilde * t.codes).sum(dtype=np.float64))
    return grad_wtilde, grad_alpha


def init_alpha(rng: np.random.Generator) -> float:
    """Draw a random initial scale, uniform in [0.5, 1.5).

    The scale is order one rather than matched to the layer's fan-in: the
    trit codes already carry unit magnitude, and this unscaled product is
    precisely what makes unnormalized ternary layers produce outsized
    activations (and what the RMS-normalized modulation path then tames).
    Strictly positive, so zero-initialized layers are covered too.
    """
    return float(rng.uniform(0.5, 1.5))
