"""Procedural class-conditional toy images for desk-scale training.

Each class renders a distinct colored shape (disk, square, cross, or
stripes, with a class-specific hue) on a dark background, with jittered
position, size, and brightness plus light pixel noise. Every image is a
pure function of (class, sample index, seed), so data order and content are
reproducible across runs. Classes are linearly separable by construction.
"""

from __future__ import annotations

import colorsys

import numpy as np

__all__ = ["synthetic_image", "make_synthetic_dataset", "sample_batch"]

_SHAPES = ("disk", "square", "cross", "stripes")


def _hue_to_rgb(h: float) -> np.ndarray:
    """Fully saturated hue in [0, 1) to an RGB triple in [0, 1]."""
    return np.asarray(colorsys.hsv_to_rgb(h % 1.0, 1.0, 1.0))


def synthetic_image(class_idx: int, sample_idx: int, seed: int, *, num_classes: int = 8,
                    image_size: int = 16, channels: int = 3) -> np.ndarray:
    """Render one sample of a class: float32 (C, H, W) with values in [-1, 1]."""
    if not 0 <= class_idx < num_classes:
        raise ValueError(f"class {class_idx} out of range [0, {num_classes})")
    rng = np.random.default_rng([seed, class_idx, sample_idx])
    s = image_size
    shape = _SHAPES[class_idx % len(_SHAPES)]
    rgb = _hue_to_rgb(class_idx / num_classes)

    cy, cx = (s - 1) / 2.0 + rng.uniform(-s / 8, s / 8, size=2)
    radius = rng.uniform(s / 5, s / 3)
    brightness = rng.uniform(0.7, 1.0)
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    if shape == "disk":
        mask = dy**2 + dx**2 <= radius**2
    elif shape == "square":
        mask = (np.abs(dy) <= radius) & (np.abs(dx) <= radius)
    elif shape == "cross":
        arm = radius / 2.5
        mask = ((np.abs(dy) <= arm) | (np.abs(dx) <= arm)) & (np.maximum(np.abs(dy), np.abs(dx)) <= radius)
    else:  # stripes
        period = max(2.0, radius)
        phase = rng.uniform(0.0, period)
        axis = yy if class_idx % 2 == 0 else xx
        mask = ((axis + phase) // (period / 2)).astype(np.int64) % 2 == 0

    # dark class-tinted background keeps classes linearly separable even
    # when the jittered shapes overlap across samples
    bg = -1.0 + 0.25 * rgb
    img = np.empty((channels, s, s))
    fg = 2.0 * brightness * rgb - 1.0
    for c in range(channels):
        img[c] = bg[c % 3]
        img[c][mask] = fg[c % 3]
    img += rng.normal(0.0, 0.05, img.shape)
    return np.clip(img, -1.0, 1.0).astype(np.float32)


def make_synthetic_dataset(num_classes: int, seed: int, *, image_size: int = 16,
                           channels: int = 3):
    """Infinite generator of (image, label), round-robin over classes.

    Item k is class ``k % num_classes``, sample index ``k // num_classes``;
    the stream is fully determined by (num_classes, seed).
    """
    k = 0
    while True:
        cls = k % num_classes
        yield synthetic_image(cls, k // num_classes, seed, num_classes=num_classes,
                              image_size=image_size, channels=channels), cls
        k += 1


def sample_batch(dataset, batch_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Pull the next ``batch_size`` items from a dataset generator."""
    images, labels = [], []
    for _ in range(batch_size):
        img, lab = next(dataset)
        images.append(img)
        labels.append(lab)
    return np.stack(images), np.asarray(labels, dtype=np.int64)


def batch_for_step(step: int, batch_size: int, num_classes: int, seed: int, *,
                   image_size: int = 16, channels: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Batch ``step`` of the stream, addressed directly by step index.

    Identical items to consuming :func:`make_synthetic_dataset` batch by
    batch, but seekable, so a training run can be resumed or forked from any
    step without replaying the stream.
    """
    idx = np.arange(step * batch_size, (step + 1) * batch_size)
    labels = idx % num_classes
    images = np.stack([
        synthetic_image(int(c), int(k) // num_classes, seed, num_classes=num_classes,
                        image_size=image_size, channels=channels)
        for k, c in zip(idx, labels)
    ])
    return images, labels.astype(np.int64)
