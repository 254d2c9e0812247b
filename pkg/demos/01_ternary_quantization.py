"""Absmean ternary quantization, step by step.

A weight matrix is reduced to three values {-alpha, 0, +alpha}: normalize by
the mean absolute value, round to the nearest integer (ties away from zero),
clamp to {-1, 0, +1}, and scale by the learnable alpha. The gradient of the
quantized weights passes straight through to the full-precision masters, and
alpha receives the exact gradient of a linear scale.
"""

import numpy as np

from tridiff import absmean_gamma, round_clip, ste_backward, ternarize

rng = np.random.default_rng(0)

w = rng.normal(0.0, 0.2, (4, 6)).astype(np.float32)
print("master weights:")
print(np.round(w, 3))

gamma = absmean_gamma(w)
print(f"\nabsmean gamma = mean|W| = {gamma:.4f}")
print("normalized W / (gamma + 1e-6):")
print(np.round(w / (gamma + 1e-6), 2))

t = ternarize(w, alpha=0.25)
print("\ntrit codes (round ties away from zero, clamp to [-1, 1]):")
print(t.codes)
print(f"\neffective weights = alpha * codes, alpha = {t.alpha}:")
print(t.effective_weights())

print("\nround_clip on a few scalars:",
      [round_clip(x, -1, 1) for x in (1.33, -0.4, 0.5, -2.63)])

# Straight-through estimator: the masters receive the quantized-weight
# gradient unchanged; alpha receives sum(grad * codes), which is exact.
grad_wtilde = rng.normal(0.0, 1.0, w.shape).astype(np.float32)
grad_w, grad_alpha = ste_backward(grad_wtilde, t)
print("\nSTE: master gradient identical to quantized gradient:",
      np.array_equal(grad_w, grad_wtilde))
print(f"alpha gradient = sum(grad * codes) = {grad_alpha:.4f}")
