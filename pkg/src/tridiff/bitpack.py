"""2-bit packed storage for trit codes, and a matmul that unpacks on the fly.

Four trits fit in one byte. A trit v in {-1, 0, +1} is stored as the 2-bit
field c = v + 1 in {0, 1, 2}; the field value 3 is reserved and rejected on
decode, which catches corrupted payloads. Element i of the flattened code
matrix occupies bits (6 - 2*(i mod 4))..(7 - 2*(i mod 4)) of byte i // 4,
i.e. the first element sits in the two most-significant bits. Trailing pad
fields encode c = 1 (the value 0) so naively unpacking the last byte yields
harmless zeros; ``pad_count`` is authoritative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CorruptPayloadError",
    "PackedTernary",
    "pack",
    "unpack",
    "packed_linear",
    "packed_nbytes",
]

_SHIFTS = np.array([6, 4, 2, 0], dtype=np.uint8)


class CorruptPayloadError(ValueError):
    """A 2-bit field decoded to the reserved value 3."""


def packed_nbytes(n_elements: int) -> int:
    """Payload size in bytes for ``n_elements`` trits: ceil(n/4)."""
    return (n_elements + 3) // 4


@dataclass(frozen=True)
class PackedTernary:
    """A 2-bit-per-trit payload with shape metadata and the scale alpha.

    The storage and inference form of a ternary weight matrix of shape
    (m, n): ``payload`` holds the row-major flattened codes, ``pad_count``
    in [0, 3] counts the trailing padding fields of the last byte.
    """

    payload: bytes
    shape: tuple[int, int]
    alpha: float
    pad_count: int

    def __post_init__(self):
        m, n = self.shape
        if m < 1 or n < 1:
            raise ValueError(f"invalid shape {self.shape}")
        expected = packed_nbytes(m * n)
        if len(self.payload) != expected:
            raise ValueError(
                f"payload holds {len(self.payload)} bytes, expected {expected} for shape {self.shape}"
            )
        if self.pad_count != (-(m * n)) % 4:
            raise ValueError(f"pad_count {self.pad_count} inconsistent with shape {self.shape}")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")

    @property
    def nbytes(self) -> int:
        return len(self.payload)


def pack(codes: np.ndarray) -> bytes:
    """Pack a flat sequence of trits into bytes, four 2-bit fields per byte."""
    codes = np.ascontiguousarray(codes).reshape(-1)
    if codes.size == 0:
        raise ValueError("cannot pack an empty code sequence")
    if not np.isin(codes, (-1, 0, 1)).all():
        raise ValueError("codes contain values outside {-1, 0, +1}")
    fields = (codes.astype(np.int16) + 1).astype(np.uint8)
    pad = (-fields.size) % 4
    if pad:
        fields = np.concatenate([fields, np.ones(pad, dtype=np.uint8)])
    grouped = fields.reshape(-1, 4)
    packed = np.zeros(grouped.shape[0], dtype=np.uint8)
    for lane in range(4):
        packed |= grouped[:, lane] << _SHIFTS[lane]
    return packed.tobytes()


def pack_matrix(codes: np.ndarray, alpha: float) -> PackedTernary:
    """Pack a 2-D code matrix row-major into a :class:`PackedTernary`."""
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise ValueError(f"expected a code matrix, got ndim={codes.ndim}")
    return PackedTernary(
        payload=pack(codes),
        shape=codes.shape,
        alpha=float(alpha),
        pad_count=(-codes.size) % 4,
    )


def unpack(payload: bytes, n_elements: int) -> np.ndarray:
    """Exact inverse of :func:`pack`: recover ``n_elements`` trits as int8.

    Rejects payloads whose length does not match ``n_elements`` and payloads
    containing the reserved field value 3 (corruption).
    """
    if n_elements < 1:
        raise ValueError(f"n_elements must be >= 1, got {n_elements}")
    if len(payload) != packed_nbytes(n_elements):
        raise ValueError(
            f"payload holds {len(payload)} bytes, expected {packed_nbytes(n_elements)} "
            f"for {n_elements} elements"
        )
    raw = np.frombuffer(payload, dtype=np.uint8)
    fields = ((raw[:, None] >> _SHIFTS[None, :]) & 0x3).reshape(-1)[:n_elements]
    if (fields == 3).any():
        raise CorruptPayloadError("payload contains the reserved 2-bit field value 3")
    return fields.astype(np.int8) - 1


def unpack_matrix(p: PackedTernary) -> np.ndarray:
    """Recover the (m, n) code matrix from a packed tensor."""
    m, n = p.shape
    return unpack(p.payload, m * n).reshape(m, n)


def packed_linear(
    x: np.ndarray,
    p: PackedTernary,
    bias: np.ndarray | None = None,
    row_tile: int | None = None,
) -> np.ndarray:
    """Apply the effective ternary weights to ``x``: x @ (alpha*codes)^T + bias.

    Codes are unpacked on the fly. With ``row_tile`` set, only ``row_tile``
    weight rows are materialized at a time, bounding transient memory at
    O(row_tile * n) instead of O(m * n); the tiled result may differ from the
    single-shot result only by accumulation order (bounded by ~1e-5 relative).
    """
    x = np.asarray(x)
    m, n = p.shape
    if x.ndim != 2 or x.shape[1] != n:
        raise ValueError(f"input shape {x.shape} does not conform to weights {p.shape}")
    if bias is not None:
        bias = np.asarray(bias)
        if bias.shape != (m,):
            raise ValueError(f"bias shape {bias.shape} does not conform to {m} output rows")
    alpha = np.asarray(p.alpha, dtype=x.dtype)
    if row_tile is None or row_tile >= m:
        wt = alpha * unpack_matrix(p).astype(x.dtype)
        out = x @ wt.T
    else:
        if row_tile < 1:
            raise ValueError(f"row_tile must be >= 1, got {row_tile}")
        out = np.empty((x.shape[0], m), dtype=x.dtype)
        for start in range(0, m, row_tile):
            stop = min(start + row_tile, m)
            # byte range covering rows [start, stop); row boundaries need not
            # be byte-aligned, so unpack the enclosing byte span and trim
            first_elem, last_elem = start * n, stop * n
            b0, b1 = first_elem // 4, packed_nbytes(last_elem)
            covered = min(b1 * 4, m * n) - b0 * 4
            chunk = unpack(p.payload[b0:b1], covered)
            rows = chunk[first_elem - b0 * 4 : last_elem - b0 * 4].reshape(stop - start, n)
            out[:, start:stop] = x @ (alpha * rows.astype(x.dtype)).T
    if bias is not None:
        out = out + bias
    return out
