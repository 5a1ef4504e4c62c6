from pathlib import Path

import numpy as np
import pytest

from actcache import (
    CodecParams,
    DecodeError,
    EncodedChunk,
    InvalidConfigError,
    InvalidValueError,
    ShapeMismatchError,
    compression_ratio,
    decode,
    decode_bytes,
    encode,
)
from actcache.codec import (
    _forward_block_transform,
    _inverse_block_transform,
    _pack_ints,
    _packbits_decode,
    _packbits_encode,
    _unpack_ints,
)

DATA_DIR = Path(__file__).parent / "data"


def _mixed_tensors(count, seed=0):
    """Seeded test tensors over several shapes and value distributions."""
    rng = np.random.default_rng(seed)
    shapes = [(4, 8, 8), (3, 16, 16), (8, 6, 10), (16, 4), (5, 7, 9), (32,)]
    out = []
    for i in range(count):
        shape = shapes[i % len(shapes)]
        kind = i % 4
        if kind == 0:
            t = rng.uniform(-1, 1, shape)
        elif kind == 1:
            t = rng.normal(0, 3.0, shape)
        elif kind == 2:  # smooth
            t = np.zeros(shape)
            grid = np.linspace(0, 2 * np.pi, int(np.prod(shape)))
            t = np.sin(grid + rng.uniform(0, 6)).reshape(shape)
        else:  # sparse
            t = rng.normal(size=shape) * (rng.uniform(size=shape) < 0.1)
        out.append(t.astype(np.float32))
    return out


class TestRoundTrip:
    @pytest.mark.parametrize("tau", [1e-1, 1e-2, 1e-3])
    def test_error_bound(self, tau):
        for t in _mixed_tensors(24, seed=17):
            chunk = encode([t], CodecParams(tau))
            (back,) = decode(chunk)
            assert back.shape == t.shape
            assert float(np.abs(t - back).max()) <= tau

    def test_lossless_bit_identical(self):
        for t in _mixed_tensors(12, seed=23):
            chunk = encode([t], CodecParams(0.0))
            (back,) = decode(chunk)
            assert np.array_equal(t.view(np.uint32), back.view(np.uint32))

    def test_lossless_denormals_and_powers(self):
        t = np.array(
            [1e-42, -1e-44, 2.0**-126, 2.0**-149, 2.0**10, -(2.0**31), 0.0, -0.0, 2.0**127],
            np.float32,
        ).reshape(3, 3)
        chunk = encode([t], CodecParams(0.0))
        (back,) = decode(chunk)
        assert np.array_equal(t.view(np.uint32), back.view(np.uint32))

    def test_extreme_magnitudes_respect_bound(self):
        rng = np.random.default_rng(5)
        t = (rng.uniform(-1, 1, (4, 8, 8)) * 10.0 ** rng.integers(0, 9, (4, 8, 8))).astype(
            np.float32
        )
        for tau in (1e-3, 1e-1):
            (back,) = decode(encode([t], CodecParams(tau)))
            assert float(np.abs(t - back).max()) <= tau

    def test_multi_sample_chunks(self):
        rng = np.random.default_rng(11)
        samples = [rng.normal(size=(4, 8, 8)).astype(np.float32) for _ in range(5)]
        chunk = encode(samples, CodecParams(1e-2))
        back = decode(chunk)
        assert len(back) == 5
        for orig, got in zip(samples, back):
            assert float(np.abs(orig - got).max()) <= 1e-2

    def test_rank1_tensor_falls_back_to_no_transform(self):
        t = np.linspace(-1, 1, 37, dtype=np.float32)
        chunk = encode([t], CodecParams(1e-2, transform="block"))
        assert chunk.params.transform == "none"
        (back,) = decode(chunk)
        assert float(np.abs(t - back).max()) <= 1e-2

    def test_idempotent_reencoding(self):
        rng = np.random.default_rng(31)
        t = rng.normal(size=(4, 12, 12)).astype(np.float32)
        tau = 1e-2
        first = decode(encode([t], CodecParams(tau)))[0]
        second = decode(encode([first], CodecParams(tau)))[0]
        assert float(np.abs(first - second).max()) <= tau


class TestDeterminism:
    def test_encode_bytes_stable(self):
        for t in _mixed_tensors(6, seed=40):
            a = encode([t], CodecParams(1e-2)).to_bytes()
            b = encode([t], CodecParams(1e-2)).to_bytes()
            assert a == b

    def test_decode_pure(self):
        t = _mixed_tensors(1, seed=41)[0]
        chunk = encode([t], CodecParams(1e-2))
        x = decode(chunk)
        y = decode(chunk)
        assert all(np.array_equal(a, b) for a, b in zip(x, y))

    def test_golden_chunk_bytes(self):
        # frozen format: the committed encode of a committed tensor
        tensor = np.fromfile(DATA_DIR / "golden_tensor.bin", dtype="<f4").reshape(4, 8, 8)
        for tau, name in ((0.0, "golden_chunk_tau0.bin"), (1e-2, "golden_chunk_tau1e-2.bin")):
            expected = (DATA_DIR / name).read_bytes()
            assert encode([tensor], CodecParams(tau)).to_bytes() == expected


class TestRatio:
    def test_zeros_compress_hard(self):
        z = np.zeros((8, 56, 56), np.float32)
        for tau in (1e-3, 1e-2, 1e-1):
            chunk = encode([z], CodecParams(tau))
            assert compression_ratio(chunk) < 0.05
            assert np.array_equal(decode(chunk)[0], z)

    def test_lossless_incompressible_near_one(self):
        rng = np.random.default_rng(55)
        t = rng.uniform(-100, 100, (16, 32, 32)).astype(np.float32)
        chunk = encode([t], CodecParams(0.0))
        header_overhead = chunk.header_bytes() / chunk.raw_bytes
        assert compression_ratio(chunk) < 1.02 + header_overhead

    def test_smooth_beats_noise(self):
        rng = np.random.default_rng(60)
        yy, xx = np.meshgrid(np.linspace(0, 1, 32), np.linspace(0, 1, 32), indexing="ij")
        smooth = np.stack(
            [np.sin(2 * np.pi * (yy + 0.3 * c)) * np.cos(2 * np.pi * xx) for c in range(8)]
        ).astype(np.float32)
        noise = rng.uniform(-1, 1, smooth.shape).astype(np.float32)
        r_smooth = compression_ratio(encode([smooth], CodecParams(1e-2)))
        r_noise = compression_ratio(encode([noise], CodecParams(1e-2)))
        assert r_smooth < r_noise

    def test_monotone_in_tolerance(self):
        for t in _mixed_tensors(8, seed=70):
            sizes = [
                encode([t], CodecParams(tau)).encoded_bytes
                for tau in (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
            ]
            assert all(a >= b for a, b in zip(sizes, sizes[1:]))

    def test_chunk_coherence_gain(self):
        rng = np.random.default_rng(80)
        base = rng.uniform(-1, 1, (8, 16, 16)).astype(np.float32)
        samples = [
            (base + rng.normal(0, 0.02, base.shape)).astype(np.float32) for _ in range(8)
        ]
        params = CodecParams(1e-2)
        multi = compression_ratio(encode(samples, params))
        singles = np.mean([compression_ratio(encode([s], params)) for s in samples])
        assert multi <= singles

    def test_ratio_accounts_header(self):
        t = np.zeros((2, 4, 4), np.float32)
        chunk = encode([t], CodecParams(1e-2))
        assert chunk.encoded_bytes == chunk.header_bytes() + len(chunk.payload)
        assert chunk.encoded_bytes == len(chunk.to_bytes())


class TestValidation:
    def test_mixed_shapes_rejected(self):
        a = np.zeros((2, 4), np.float32)
        b = np.zeros((2, 5), np.float32)
        with pytest.raises(ShapeMismatchError):
            encode([a, b], CodecParams(1e-2))

    def test_non_finite_rejected(self):
        t = np.array([[1.0, np.nan]], np.float32)
        with pytest.raises(InvalidValueError):
            encode([t], CodecParams(1e-2))

    def test_empty_chunk_rejected(self):
        with pytest.raises(InvalidConfigError):
            encode([], CodecParams(1e-2))

    def test_negative_tolerance_rejected(self):
        with pytest.raises(InvalidConfigError):
            CodecParams(-1e-3)

    def test_truncated_bytes_error(self):
        t = _mixed_tensors(1, seed=90)[0]
        blob = encode([t], CodecParams(1e-2)).to_bytes()
        for cut in (1, 5, len(blob) // 2, len(blob) - 1):
            with pytest.raises(DecodeError):
                decode_bytes(blob[:cut])

    def test_corrupted_payload_error(self):
        t = _mixed_tensors(1, seed=91)[0]
        blob = bytearray(encode([t], CodecParams(1e-2)).to_bytes())
        blob[len(blob) // 2] ^= 0xFF
        with pytest.raises(DecodeError):
            decode_bytes(bytes(blob))

    def test_bad_magic_error(self):
        t = _mixed_tensors(1, seed=92)[0]
        blob = bytearray(encode([t], CodecParams(1e-2)).to_bytes())
        blob[0] = ord("X")
        with pytest.raises(DecodeError):
            decode_bytes(bytes(blob))

    def test_bytes_round_trip_metadata(self):
        t = _mixed_tensors(1, seed=93)[0]
        chunk = encode([t], CodecParams(1e-2))
        parsed = EncodedChunk.from_bytes(chunk.to_bytes())
        assert parsed.shape == chunk.shape
        assert parsed.count == chunk.count
        assert parsed.params == chunk.params
        assert parsed.raw_bytes == chunk.raw_bytes
        assert parsed.encoded_bytes == chunk.encoded_bytes


class TestInternals:
    def test_block_transform_invertible(self):
        rng = np.random.default_rng(100)
        for shape in [(3, 7, 9), (1, 4, 4), (2, 5, 5), (4, 16, 16), (6, 3)]:
            q = rng.integers(-(2**40), 2**40, size=shape).astype(np.int64)
            coeffs = _forward_block_transform(q)
            back = _inverse_block_transform(coeffs, shape)
            assert np.array_equal(back, q)

    def test_pack_ints_round_trip(self):
        rng = np.random.default_rng(101)
        cases = [
            np.zeros(100, np.int64),
            np.ones(5, np.int64),
            rng.integers(-(2**45), 2**45, 200),
            np.array([0, 0, 5, 0, 0, 0, -3, 0], np.int64),
            np.array([7], np.int64),
            (rng.normal(size=500) * 10).astype(np.int64),
        ]
        for values in cases:
            packed = _pack_ints(values.astype(np.int64))
            assert np.array_equal(_unpack_ints(packed, len(values)), values)

    def test_pack_ints_wrong_count_rejected(self):
        packed = _pack_ints(np.array([1, 2, 3], np.int64))
        with pytest.raises(DecodeError):
            _unpack_ints(packed, 4)

    def test_packbits_round_trip(self):
        rng = np.random.default_rng(102)
        cases = [
            b"",
            b"\x00" * 1000,
            bytes(rng.integers(0, 256, 777, dtype=np.uint8)),
            b"ab" * 64 + b"c" * 300 + b"d",
            bytes(range(256)) * 3,
        ]
        for raw in cases:
            packed = _packbits_encode(raw)
            assert _packbits_decode(packed, len(raw)) == raw

    def test_packbits_truncated(self):
        packed = _packbits_encode(b"\x01" * 500)
        with pytest.raises(DecodeError):
            _packbits_decode(packed[:-1], 500)
