"""Packing tests: bit-level oracle, exhaustive round-trips, matmul oracle."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tridiff.bitpack import (
    CorruptPayloadError,
    PackedTernary,
    pack,
    pack_matrix,
    packed_linear,
    packed_nbytes,
    unpack,
    unpack_matrix,
)


def oracle_pack(trits) -> bytes:
    """Independent encoder: build each byte from a literal bit string."""
    fields = [v + 1 for v in trits]
    while len(fields) % 4:
        fields.append(1)
    out = []
    for i in range(0, len(fields), 4):
        bits = "".join(format(f, "02b") for f in fields[i : i + 4])
        out.append(int(bits, 2))
    return bytes(out)


class TestPack:
    def test_worked_examples(self):
        assert pack(np.array([1, 0, -1, 0])) == bytes([0x91])
        assert pack(np.array([0, 0, 0, 0])) == bytes([0x55])
        assert pack(np.array([1])) == bytes([0x95])

    def test_pad_count(self):
        p = pack_matrix(np.array([[1]], dtype=np.int8), alpha=1.0)
        assert p.pad_count == 3
        assert p.payload == bytes([0x95])

    def test_out_of_range_trit(self):
        with pytest.raises(ValueError):
            pack(np.array([1, 2, 0]))
        with pytest.raises(ValueError):
            pack(np.array([0.5]))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            pack(np.array([], dtype=np.int8))

    @given(st.lists(st.sampled_from([-1, 0, 1]), min_size=1, max_size=40))
    @settings(max_examples=300)
    def test_matches_bit_oracle(self, trits):
        assert pack(np.array(trits)) == oracle_pack(trits)


class TestUnpack:
    def test_worked_example(self):
        assert unpack(bytes([0x91]), 4).tolist() == [1, 0, -1, 0]

    def test_exhaustive_four_tuples(self):
        seen = set()
        for tup in itertools.product((-1, 0, 1), repeat=4):
            payload = pack(np.array(tup))
            seen.add(payload)
            assert unpack(payload, 4).tolist() == list(tup)
        assert len(seen) == 81  # injective on 4-tuples

    def test_reserved_field_rejected(self):
        with pytest.raises(CorruptPayloadError):
            unpack(bytes([0xFF]), 4)
        # field 3 in a non-leading position
        with pytest.raises(CorruptPayloadError):
            unpack(bytes([0b01010111]), 4)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            unpack(bytes([0x55, 0x55]), 4)
        with pytest.raises(ValueError):
            unpack(bytes([0x55]), 5)

    def test_pad_fields_dropped(self):
        assert unpack(pack(np.array([1, -1, 1])), 3).tolist() == [1, -1, 1]

    @given(st.lists(st.sampled_from([-1, 0, 1]), min_size=1, max_size=200))
    @settings(max_examples=300)
    def test_roundtrip(self, trits):
        arr = np.array(trits, dtype=np.int8)
        assert np.array_equal(unpack(pack(arr), len(trits)), arr)

    def test_roundtrip_large_random(self, rng):
        for _ in range(20):
            m, n = rng.integers(1, 70, size=2)
            codes = rng.integers(-1, 2, size=(m, n)).astype(np.int8)
            p = pack_matrix(codes, alpha=1.0)
            assert p.nbytes == packed_nbytes(m * n)
            assert np.array_equal(unpack_matrix(p), codes)


class TestPackedTernary:
    def test_invariants(self):
        with pytest.raises(ValueError):
            PackedTernary(payload=b"\x55", shape=(2, 3), alpha=1.0, pad_count=2)
        with pytest.raises(ValueError):
            PackedTernary(payload=b"\x55\x55", shape=(2, 3), alpha=1.0, pad_count=0)
        with pytest.raises(ValueError):
            PackedTernary(payload=b"\x55\x55", shape=(2, 3), alpha=-1.0, pad_count=2)

    def test_storage_ratio_per_layer(self):
        # >= 15.9x against dense float32 once the payload dominates the metadata
        for p in (10_000, 1_000_000):
            dense = 4 * p
            packed = packed_nbytes(p) + 5
            assert dense / packed >= 15.9


class TestPackedLinear:
    def test_identity_input_recovers_weights(self, rng):
        codes = rng.integers(-1, 2, size=(6, 9)).astype(np.int8)
        p = pack_matrix(codes, alpha=1.5)
        out = packed_linear(np.eye(9, dtype=np.float32), p)
        wt = np.float32(1.5) * codes.astype(np.float32)
        assert np.array_equal(out, wt.T)

    def test_zero_codes_give_bias(self, rng):
        p = pack_matrix(np.zeros((4, 8), dtype=np.int8), alpha=2.0)
        bias = rng.standard_normal(4).astype(np.float32)
        x = rng.standard_normal((3, 8)).astype(np.float32)
        out = packed_linear(x, p, bias=bias)
        assert np.array_equal(out, np.broadcast_to(bias, (3, 4)))

    def test_matches_dense_oracle_exactly(self, rng):
        for _ in range(25):
            codes = rng.integers(-1, 2, size=(16, 32)).astype(np.int8)
            p = pack_matrix(codes, alpha=1.0)
            x = rng.standard_normal((5, 32)).astype(np.float32)
            dense = x @ (np.float32(1.0) * codes.astype(np.float32)).T
            assert np.array_equal(packed_linear(x, p), dense)

    def test_tiled_within_tolerance(self, rng):
        codes = rng.integers(-1, 2, size=(23, 17)).astype(np.int8)  # odd sizes
        alpha = 0.37
        p = pack_matrix(codes, alpha=alpha)
        x = rng.standard_normal((11, 17)).astype(np.float32)
        dense = x @ (np.float32(alpha) * codes.astype(np.float32)).T
        for tile in (1, 2, 3, 5, 23, 100):
            out = packed_linear(x, p, row_tile=tile)
            np.testing.assert_allclose(out, dense, rtol=1e-5, atol=1e-6)

    def test_bias_with_tiling(self, rng):
        codes = rng.integers(-1, 2, size=(7, 13)).astype(np.int8)
        p = pack_matrix(codes, alpha=0.9)
        bias = rng.standard_normal(7).astype(np.float32)
        x = rng.standard_normal((4, 13)).astype(np.float32)
        full = packed_linear(x, p, bias=bias)
        tiled = packed_linear(x, p, bias=bias, row_tile=2)
        np.testing.assert_allclose(tiled, full, rtol=1e-5, atol=1e-6)

    def test_shape_errors(self, rng):
        p = pack_matrix(rng.integers(-1, 2, size=(4, 6)).astype(np.int8), alpha=1.0)
        with pytest.raises(ValueError):
            packed_linear(np.zeros((2, 5), dtype=np.float32), p)
        with pytest.raises(ValueError):
            packed_linear(np.zeros((2, 6), dtype=np.float32), p, bias=np.zeros(3, dtype=np.float32))
        with pytest.raises(ValueError):
            packed_linear(np.zeros((2, 6), dtype=np.float32), p, row_tile=0)
