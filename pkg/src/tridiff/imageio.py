"""Binary portable pixmap (P6) output for sampled images."""

from __future__ import annotations

import numpy as np

__all__ = ["to_uint8", "write_ppm", "read_ppm"]


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Map a (C, H, W) image from [-1, 1] to uint8 (H, W, C) with clamping."""
    img = np.asarray(img)
    if img.ndim != 3:
        raise ValueError(f"expected (C, H, W), got shape {img.shape}")
    scaled = np.clip((img + 1.0) * 127.5, 0.0, 255.0)
    return scaled.astype(np.uint8).transpose(1, 2, 0)


def write_ppm(path: str, img: np.ndarray) -> None:
    """Write a (C, H, W) float image in [-1, 1] as an 8-bit binary P6 file."""
    pixels = to_uint8(img)
    h, w, c = pixels.shape
    if c == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    elif c != 3:
        raise ValueError(f"P6 needs 1 or 3 channels, got {c}")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_ppm(path: str) -> np.ndarray:
    """Read a binary P6 file back to uint8 (H, W, 3)."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P6":
        raise ValueError(f"{path} is not a binary P6 pixmap")
    w, h = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise ValueError("only 8-bit pixmaps supported")
    pixels = np.frombuffer(parts[3][: w * h * 3], dtype=np.uint8)
    return pixels.reshape(h, w, 3)
