"""Binary checkpoint format for dense float32 and packed ternary tensors.

Layout (all integers little-endian):

    magic            4 bytes  "TERD"
    version          u32      currently 1
    config length    u32      followed by that many bytes of UTF-8 text
    tensor count     u32
    per tensor:
        name length  u32      followed by that many bytes of UTF-8 text
        kind         u8       0 = dense float32, 1 = packed ternary
        rank         u8
        dims         rank * u64
        kind 1 only: alpha f32, pad_count u8
        payload len  u64
        payload      row-major f32 (kind 0) or 2-bit packed trits (kind 1)

Serialization is deterministic: identical checkpoints produce identical
bytes. Deserialization validates magic, version, name uniqueness, and that
every length field stays inside the buffer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .bitpack import PackedTernary, packed_nbytes

__all__ = ["CheckpointError", "Checkpoint", "serialize", "deserialize", "MAGIC", "VERSION"]

MAGIC = b"TERD"
VERSION = 1

KIND_DENSE = 0
KIND_PACKED = 1


class CheckpointError(ValueError):
    """Malformed checkpoint bytes or an invalid checkpoint structure."""


@dataclass
class Checkpoint:
    """An ordered, uniquely named collection of tensors plus config text.

    Tensor values are either dense float32 arrays or :class:`PackedTernary`
    payloads. Order is preserved through serialization.
    """

    config_text: str = ""
    tensors: list[tuple[str, np.ndarray | PackedTernary]] = field(default_factory=list)

    def __post_init__(self):
        names = [name for name, _ in self.tensors]
        if len(names) != len(set(names)):
            raise CheckpointError("duplicate tensor names in checkpoint")

    def add(self, name: str, value: np.ndarray | PackedTernary) -> None:
        if any(name == existing for existing, _ in self.tensors):
            raise CheckpointError(f"duplicate tensor name: {name!r}")
        if not isinstance(value, PackedTernary):
            value = np.asarray(value, dtype=np.float32)  # keeps rank-0 scalars rank 0
        self.tensors.append((name, value))

    def get(self, name: str) -> np.ndarray | PackedTernary:
        for existing, value in self.tensors:
            if existing == name:
                return value
        raise KeyError(name)

    def names(self) -> list[str]:
        return [name for name, _ in self.tensors]

    @property
    def has_packed(self) -> bool:
        return any(isinstance(v, PackedTernary) for _, v in self.tensors)

    def payload_nbytes(self) -> int:
        """Total bytes of tensor payloads, excluding names and headers."""
        total = 0
        for _, value in self.tensors:
            if isinstance(value, PackedTernary):
                total += value.nbytes
            else:
                total += 4 * value.size
        return total


def _put_str(out: bytearray, text: str) -> None:
    raw = text.encode("utf-8")
    out += struct.pack("<I", len(raw))
    out += raw


def serialize(ckpt: Checkpoint) -> bytes:
    """Encode a checkpoint to bytes; deterministic for equal inputs."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    _put_str(out, ckpt.config_text)
    out += struct.pack("<I", len(ckpt.tensors))
    for name, value in ckpt.tensors:
        _put_str(out, name)
        if isinstance(value, PackedTernary):
            m, n = value.shape
            out += struct.pack("<BB", KIND_PACKED, 2)
            out += struct.pack("<QQ", m, n)
            out += struct.pack("<f", value.alpha)
            out += struct.pack("<B", value.pad_count)
            out += struct.pack("<Q", len(value.payload))
            out += value.payload
        else:
            arr = np.asarray(value, dtype="<f4")
            out += struct.pack("<BB", KIND_DENSE, arr.ndim)
            for dim in arr.shape:
                out += struct.pack("<Q", dim)
            raw = arr.tobytes()
            out += struct.pack("<Q", len(raw))
            out += raw
    return bytes(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, "
                f"have {len(self.buf) - self.pos}"
            )
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f32(self) -> float:
        return struct.unpack("<f", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def deserialize(data: bytes) -> Checkpoint:
    """Decode checkpoint bytes, validating structure along the way."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config_text = r.string()
    count = r.u32()
    ckpt = Checkpoint(config_text=config_text)
    for _ in range(count):
        name = r.string()
        kind = r.u8()
        rank = r.u8()
        dims = tuple(r.u64() for _ in range(rank))
        if kind == KIND_PACKED:
            if rank != 2:
                raise CheckpointError(f"packed tensor {name!r} must have rank 2, got {rank}")
            alpha = r.f32()
            pad_count = r.u8()
            length = r.u64()
            m, n = dims
            if length != packed_nbytes(m * n):
                raise CheckpointError(
                    f"packed tensor {name!r}: payload length {length} does not match shape {dims}"
                )
            payload = r.take(length)
            value: np.ndarray | PackedTernary = PackedTernary(
                payload=payload, shape=(m, n), alpha=alpha, pad_count=pad_count
            )
        elif kind == KIND_DENSE:
            length = r.u64()
            expected = 4 * int(np.prod(dims, dtype=np.int64))
            if length != expected:
                raise CheckpointError(
                    f"dense tensor {name!r}: payload length {length} does not match shape {dims}"
                )
            raw = r.take(length)
            value = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        else:
            raise CheckpointError(f"unknown tensor kind {kind} for {name!r}")
        ckpt.add(name, value)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after checkpoint payload")
    return ckpt
