"""Error-bounded lossy compression of float32 tensor chunks.

Lossy path: every value is quantized onto a uniform grid with step
``2*tau*(1 - 2**-12)`` so all loss comes from this single stage and is
bounded by tau; an exactly invertible integer lifting transform on 4x4
spatial blocks decorrelates smooth content; each sample's integer stream
is delta-coded against the previous sample in the chunk whenever that
packs smaller; streams are packed with zero run-length plus LEB128
varints. The rare values the grid cannot reproduce within tau after
rounding back to float32 (extreme magnitudes, |q| overflow) are carried
verbatim in an outlier section, so the bound holds unconditionally.

tau = 0 is strict lossless mode: the raw little-endian float32 stream is
byte run-length packed (PackBits) and restored bit-identically.

Chunk byte layout (little-endian), also documented in docs/FORMAT.md:

    magic "AFC1" | transform id u8 | tau f64 | k u32 | rank u32 |
    dims rank*u32 | raw size u64 | payload size u64 | payload |
    crc32(payload) u32
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import (
    DecodeError,
    InvalidConfigError,
    ShapeMismatchError,
)
from .tensors import as_tensor

CHUNK_MAGIC = b"AFC1"
BLOCK_EDGE = 4
TRANSFORM_NONE = 0
TRANSFORM_BLOCK = 1
_TRANSFORM_NAMES = {TRANSFORM_NONE: "none", TRANSFORM_BLOCK: "block"}

# Quantized magnitudes beyond this are stored verbatim: keeps every
# intermediate integer (block sums, deltas) well inside exact float64 /
# int64 range.
_Q_MAX = float(1 << 44)
# Slightly shrunk step keeps the worst-case quantization error strictly
# under tau, leaving headroom for the final float32 rounding.
_STEP_SCALE = 1.0 - 2.0**-12

_FIXED_HEAD = struct.Struct("<4sBdII")  # magic, transform, tau, k, rank


def quantization_step(tolerance: float) -> float:
    return 2.0 * tolerance * _STEP_SCALE


@dataclass(frozen=True)
class CodecParams:
    """Codec configuration: absolute error bound and decorrelation mode."""

    tolerance: float
    transform: str = "block"

    def __post_init__(self):
        if not np.isfinite(self.tolerance) or self.tolerance < 0:
            raise InvalidConfigError(f"tolerance must be finite and >= 0, got {self.tolerance}")
        if self.transform not in ("none", "block"):
            raise InvalidConfigError(f"unknown transform {self.transform!r}")

    @property
    def transform_id(self) -> int:
        return TRANSFORM_BLOCK if self.transform == "block" else TRANSFORM_NONE


@dataclass(frozen=True)
class EncodedChunk:
    """Compressed bytes for k same-shape samples plus self-describing metadata.

    ``params.transform`` records the transform actually applied (rank-1
    inputs fall back to "none" even when "block" was requested).
    """

    params: CodecParams
    shape: tuple[int, ...]
    count: int
    payload: bytes
    raw_bytes: int
    encoded_bytes: int

    def header_bytes(self) -> int:
        # fixed head + dims + raw/payload sizes + trailing payload CRC
        return _FIXED_HEAD.size + 4 * len(self.shape) + 16 + 4

    def to_bytes(self) -> bytes:
        head = _FIXED_HEAD.pack(
            CHUNK_MAGIC, self.params.transform_id, self.params.tolerance,
            self.count, len(self.shape),
        )
        dims = struct.pack(f"<{len(self.shape)}I", *self.shape)
        sizes = struct.pack("<QQ", self.raw_bytes, len(self.payload))
        crc = struct.pack("<I", zlib.crc32(self.payload))
        return head + dims + sizes + self.payload + crc

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncodedChunk":
        if len(data) < _FIXED_HEAD.size:
            raise DecodeError("chunk shorter than fixed header")
        magic, tid, tau, count, rank = _FIXED_HEAD.unpack_from(data, 0)
        if magic != CHUNK_MAGIC:
            raise DecodeError(f"bad chunk magic {magic!r}")
        if tid not in _TRANSFORM_NAMES:
            raise DecodeError(f"unknown transform id {tid}")
        if not (np.isfinite(tau) and tau >= 0):
            raise DecodeError(f"invalid tolerance {tau}")
        if count < 1:
            raise DecodeError("sample count must be >= 1")
        if not 1 <= rank <= 16:
            raise DecodeError(f"unsupported rank {rank}")
        pos = _FIXED_HEAD.size
        if len(data) < pos + 4 * rank + 16:
            raise DecodeError("chunk truncated in dimension list")
        shape = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        if any(d < 1 for d in shape):
            raise DecodeError(f"invalid dimensions {shape}")
        raw_bytes, payload_len = struct.unpack_from("<QQ", data, pos)
        pos += 16
        numel = int(np.prod([int(d) for d in shape], dtype=np.int64))
        if raw_bytes != count * numel * 4:
            raise DecodeError("raw size disagrees with shape and count")
        if len(data) != pos + payload_len + 4:
            raise DecodeError("chunk length disagrees with payload size")
        payload = data[pos : pos + payload_len]
        (crc,) = struct.unpack_from("<I", data, pos + payload_len)
        if zlib.crc32(payload) != crc:
            raise DecodeError("payload checksum mismatch")
        params = CodecParams(tolerance=tau, transform=_TRANSFORM_NAMES[tid])
        return cls(
            params=params, shape=tuple(int(d) for d in shape), count=count,
            payload=payload, raw_bytes=raw_bytes, encoded_bytes=len(data),
        )


# ---------------------------------------------------------------------------
# Varint + zero run-length packing of integer streams
# ---------------------------------------------------------------------------

_VARINT_BOUNDS = np.array([1 << (7 * i) for i in range(1, 10)], dtype=np.uint64)


def _zigzag(values: np.ndarray) -> np.ndarray:
    v = values.astype(np.int64, copy=False)
    return np.where(v >= 0, v << 1, ((-v) << 1) - 1).astype(np.uint64)


def _unzigzag(z: np.ndarray) -> np.ndarray:
    half = (z >> np.uint64(1)).astype(np.int64)
    return np.where((z & np.uint64(1)).astype(bool), -half - 1, half)


def _varint_encode(values: np.ndarray) -> bytes:
    z = values.astype(np.uint64, copy=False)
    if z.size == 0:
        return b""
    nbytes = np.searchsorted(_VARINT_BOUNDS, z, side="right") + 1
    starts = np.cumsum(nbytes) - nbytes
    out = np.zeros(int(nbytes.sum()), dtype=np.uint8)
    for b in range(int(nbytes.max())):
        sel = nbytes > b
        group = (z[sel] >> np.uint64(7 * b)) & np.uint64(0x7F)
        more = (nbytes[sel] - 1) > b
        out[starts[sel] + b] = group.astype(np.uint8) | (more.astype(np.uint8) << 7)
    return out.tobytes()


def _varint_decode(buf: np.ndarray) -> np.ndarray:
    if buf.size == 0:
        return np.zeros(0, dtype=np.uint64)
    term = (buf & 0x80) == 0
    if not term[-1]:
        raise DecodeError("truncated varint stream")
    ends = np.flatnonzero(term)
    starts = np.concatenate([[0], ends[:-1] + 1])
    lengths = ends - starts + 1
    if int(lengths.max()) > 10:
        raise DecodeError("varint longer than 10 bytes")
    vals = np.zeros(len(starts), dtype=np.uint64)
    for b in range(int(lengths.max())):
        sel = lengths > b
        group = buf[starts[sel] + b].astype(np.uint64) & np.uint64(0x7F)
        vals[sel] |= group << np.uint64(7 * b)
    return vals


def _varint_encode_scalar(value: int) -> bytes:
    out = bytearray()
    v = int(value)
    while True:
        b = v & 0x7F
        v >>= 7
        if v:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _varint_decode_scalar(data: bytes, pos: int) -> tuple[int, int]:
    value = 0
    shift = 0
    while True:
        if pos >= len(data):
            raise DecodeError("truncated varint")
        b = data[pos]
        pos += 1
        value |= (b & 0x7F) << shift
        if not (b & 0x80):
            return value, pos
        shift += 7
        if shift > 63:
            raise DecodeError("varint longer than 10 bytes")


def _pack_ints(values: np.ndarray) -> bytes:
    """Zero run-length + varint coding of a signed integer stream.

    Symbol grammar: 0 = a single zero; 1 = a zero run, followed by
    varint(runlen - 2); s >= 2 = the value unzigzag(s - 1). Isolated zeros
    therefore cost one byte, runs of r zeros cost two symbols.
    """
    z = _zigzag(values)
    n = z.size
    if n == 0:
        return b""
    iszero = z == 0
    prev = np.concatenate([[False], iszero[:-1]])
    run_start = iszero & ~prev
    nz_idx = np.flatnonzero(~iszero)
    rs_idx = np.flatnonzero(run_start)
    if rs_idx.size:
        if nz_idx.size:
            nxt = np.searchsorted(nz_idx, rs_idx)
            ends = np.where(nxt < nz_idx.size, nz_idx[np.minimum(nxt, nz_idx.size - 1)], n)
        else:
            ends = np.full(rs_idx.shape, n, dtype=np.int64)
        runlens = ends - rs_idx
    else:
        runlens = np.zeros(0, dtype=np.int64)
    multi = runlens >= 2
    emit = np.zeros(n, dtype=np.int64)
    emit[nz_idx] = 1
    emit[rs_idx] = np.where(multi, 2, 1)
    slots = np.cumsum(emit) - emit
    sym = np.zeros(int(emit.sum()), dtype=np.uint64)
    sym[slots[nz_idx]] = z[nz_idx] + np.uint64(1)
    if rs_idx.size:
        single_slots = slots[rs_idx[~multi]]
        sym[single_slots] = 0
        multi_slots = slots[rs_idx[multi]]
        sym[multi_slots] = 1
        sym[multi_slots + 1] = (runlens[multi] - 2).astype(np.uint64)
    return _varint_encode(sym)


def _unpack_ints(buf: bytes, expected: int) -> np.ndarray:
    syms = _varint_decode(np.frombuffer(buf, dtype=np.uint8))
    if expected == 0:
        if syms.size:
            raise DecodeError("unexpected trailing symbols")
        return np.zeros(0, dtype=np.int64)
    if syms.size == 0:
        raise DecodeError(f"stream decodes to 0 values, expected {expected}")
    ones = syms == 1
    # a 1-symbol is a run marker unless it sits in the length slot of the
    # previous marker; inside each maximal run of 1s that alternation makes
    # exactly the even offsets markers
    pos = np.arange(syms.size)
    run_starts = ones & ~np.concatenate([[False], ones[:-1]])
    start_pos = np.maximum.accumulate(np.where(run_starts, pos, -1))
    markers = ones & (((pos - start_pos) & 1) == 0)
    marker_idx = np.flatnonzero(markers)
    if marker_idx.size and marker_idx[-1] + 1 >= syms.size:
        raise DecodeError("zero-run marker without a length")
    length_slots = np.zeros(syms.size, dtype=bool)
    length_slots[marker_idx + 1] = True
    out_lens = np.ones(syms.size, dtype=np.int64)
    out_lens[length_slots] = 0
    out_lens[marker_idx] = syms[marker_idx + 1].astype(np.int64) + 2
    total = int(out_lens.sum())
    if total != expected:
        raise DecodeError(f"stream decodes to {total} values, expected {expected}")
    out = np.zeros(total, dtype=np.int64)
    value_mask = (syms >= 2) & ~markers & ~length_slots
    positions = np.cumsum(out_lens) - out_lens
    out[positions[value_mask]] = _unzigzag(syms[value_mask] - np.uint64(1))
    return out


# ---------------------------------------------------------------------------
# PackBits byte run-length coding (lossless tau = 0 path)
# ---------------------------------------------------------------------------


def _packbits_encode(data: bytes) -> bytes:
    buf = np.frombuffer(data, dtype=np.uint8)
    n = buf.size
    if n == 0:
        return b""
    change = np.flatnonzero(buf[1:] != buf[:-1]) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [n]])
    out = bytearray()

    def flush_literal(ls: int, le: int) -> None:
        while ls < le:
            c = min(128, le - ls)
            out.append(c - 1)
            out.extend(data[ls : ls + c])
            ls += c

    lit_start = -1
    for s, e in zip(starts, ends):
        run = int(e - s)
        if run >= 3:
            if lit_start >= 0:
                flush_literal(lit_start, int(s))
                lit_start = -1
            rem = run
            value = int(buf[s])
            while rem:
                c = 128 if rem >= 128 else rem
                if rem - c == 1:
                    c -= 1  # never leave a remainder of 1 (repeat needs >= 2)
                out.append(257 - c)
                out.append(value)
                rem -= c
        elif lit_start < 0:
            lit_start = int(s)
    if lit_start >= 0:
        flush_literal(lit_start, n)
    return bytes(out)


def _packbits_decode(data: bytes, expected: int) -> bytes:
    out = bytearray()
    pos = 0
    n = len(data)
    while pos < n:
        ctrl = data[pos]
        pos += 1
        if ctrl < 128:
            cnt = ctrl + 1
            if pos + cnt > n:
                raise DecodeError("truncated literal run")
            out += data[pos : pos + cnt]
            pos += cnt
        elif ctrl == 128:
            raise DecodeError("invalid control byte 0x80")
        else:
            cnt = 257 - ctrl
            if pos >= n:
                raise DecodeError("truncated repeat run")
            out += data[pos : pos + 1] * cnt
            pos += 1
        if len(out) > expected:
            raise DecodeError("packed stream expands past its raw size")
    if len(out) != expected:
        raise DecodeError(f"packed stream expands to {len(out)} bytes, expected {expected}")
    return bytes(out)


# ---------------------------------------------------------------------------
# Invertible integer lifting transform on 4x4 spatial blocks
# ---------------------------------------------------------------------------


def _lift4_forward(arr: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(arr, axis, -1)
    x0, x1, x2, x3 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    l0 = (x0 + x1) >> 1
    h0 = x0 - x1
    l1 = (x2 + x3) >> 1
    h1 = x2 - x3
    ll = (l0 + l1) >> 1
    hl = l0 - l1
    out = np.stack([ll, hl, h0, h1], axis=-1)
    return np.moveaxis(out, -1, axis)


def _lift4_inverse(arr: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(arr, axis, -1)
    ll, hl, h0, h1 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    l0 = ll + ((hl + 1) >> 1)
    l1 = l0 - hl
    x0 = l0 + ((h0 + 1) >> 1)
    x1 = x0 - h0
    x2 = l1 + ((h1 + 1) >> 1)
    x3 = x2 - h1
    out = np.stack([x0, x1, x2, x3], axis=-1)
    return np.moveaxis(out, -1, axis)


def _padded_hw(shape: tuple[int, ...]) -> tuple[int, int]:
    h, w = shape[-2], shape[-1]
    return -(-h // BLOCK_EDGE) * BLOCK_EDGE, -(-w // BLOCK_EDGE) * BLOCK_EDGE


def _coeff_count(shape: tuple[int, ...], use_block: bool) -> int:
    numel = int(np.prod(shape, dtype=np.int64))
    if not use_block:
        return numel
    hp, wp = _padded_hw(shape)
    lead = numel // (shape[-2] * shape[-1])
    return lead * hp * wp


def _forward_block_transform(q: np.ndarray) -> np.ndarray:
    """q: int64 of shape (*lead, H, W) -> flattened padded coefficients."""
    h, w = q.shape[-2], q.shape[-1]
    hp, wp = _padded_hw(q.shape)
    pads = [(0, 0)] * (q.ndim - 2) + [(0, hp - h), (0, wp - w)]
    padded = np.pad(q, pads, mode="edge")
    blocks = padded.reshape(-1, hp // 4, 4, wp // 4, 4)
    blocks = _lift4_forward(blocks, axis=4)
    blocks = _lift4_forward(blocks, axis=2)
    return blocks.reshape(-1).astype(np.int64, copy=False)


def _inverse_block_transform(coeffs: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    h, w = shape[-2], shape[-1]
    hp, wp = _padded_hw(shape)
    lead = int(np.prod(shape, dtype=np.int64)) // (h * w)
    blocks = coeffs.reshape(lead, hp // 4, 4, wp // 4, 4)
    blocks = _lift4_inverse(blocks, axis=2)
    blocks = _lift4_inverse(blocks, axis=4)
    full = blocks.reshape(lead, hp, wp)[:, :h, :w]
    return np.ascontiguousarray(full).reshape(shape)


# ---------------------------------------------------------------------------
# Encode / decode
# ---------------------------------------------------------------------------


def _encode_lossy(stacked: np.ndarray, tolerance: float, use_block: bool) -> bytes:
    step = quantization_step(tolerance)
    x64 = stacked.astype(np.float64)
    q = np.floor(x64 / step + 0.5)
    overflow = np.abs(q) > _Q_MAX
    if overflow.any():
        q = np.where(overflow, 0.0, q)
    recon = (q * step).astype(np.float32)
    bad = np.abs(x64 - recon.astype(np.float64)) > tolerance
    outliers = overflow | bad
    if outliers.any():
        q = np.where(outliers, 0.0, q)
    qi = q.astype(np.int64)

    parts: list[bytes] = []
    prev = None
    for i in range(stacked.shape[0]):
        coeffs = _forward_block_transform(qi[i]) if use_block else qi[i].reshape(-1)
        raw_packed = _pack_ints(coeffs)
        chosen_mode, chosen = 0, raw_packed
        if prev is not None:
            delta_packed = _pack_ints(coeffs - prev)
            if len(delta_packed) < len(raw_packed):
                chosen_mode, chosen = 1, delta_packed
        parts.append(bytes([chosen_mode]) + _varint_encode_scalar(len(chosen)) + chosen)
        prev = coeffs

    out_idx = np.flatnonzero(outliers.reshape(-1))
    parts.append(_varint_encode_scalar(int(out_idx.size)))
    if out_idx.size:
        gaps = np.concatenate([out_idx[:1], np.diff(out_idx)]).astype(np.uint64)
        parts.append(_varint_encode(gaps))
        parts.append(stacked.reshape(-1)[out_idx].astype("<f4").tobytes())
    return b"".join(parts)


def encode(samples, params: CodecParams) -> EncodedChunk:
    """Compress k same-shape tensors into one self-describing chunk.

    Deterministic: identical inputs yield identical bytes. After decoding,
    every element is within ``params.tolerance`` of its input (exact when
    the tolerance is 0).
    """
    arrs = [as_tensor(s) for s in samples]
    if not arrs:
        raise InvalidConfigError("a chunk needs at least one sample")
    shape = arrs[0].shape
    for a in arrs[1:]:
        if a.shape != shape:
            raise ShapeMismatchError(f"mixed sample shapes: {shape} vs {a.shape}")
    stacked = np.stack(arrs)
    tolerance = float(params.tolerance)
    use_block = params.transform == "block" and len(shape) >= 2 and tolerance > 0
    if tolerance == 0.0:
        payload = _packbits_encode(stacked.astype("<f4", copy=False).tobytes())
    else:
        payload = _encode_lossy(stacked, tolerance, use_block)
    applied = CodecParams(
        tolerance=tolerance, transform="block" if use_block else "none"
    )
    header_len = _FIXED_HEAD.size + 4 * len(shape) + 16 + 4
    return EncodedChunk(
        params=applied, shape=tuple(shape), count=len(arrs), payload=payload,
        raw_bytes=int(stacked.nbytes), encoded_bytes=header_len + len(payload),
    )


def decode(chunk: EncodedChunk) -> list[np.ndarray]:
    """Inverse of :func:`encode`; returns k float32 tensors."""
    shape = chunk.shape
    numel = int(np.prod(shape, dtype=np.int64))
    k = chunk.count
    tolerance = chunk.params.tolerance
    payload = chunk.payload
    if tolerance == 0.0:
        raw = _packbits_decode(payload, expected=k * numel * 4)
        stacked = np.frombuffer(raw, dtype="<f4").reshape((k,) + shape)
        return [np.ascontiguousarray(stacked[i]) for i in range(k)]

    use_block = chunk.params.transform == "block"
    if use_block and len(shape) < 2:
        raise DecodeError("block transform recorded for a rank-1 chunk")
    coeff_len = _coeff_count(shape, use_block)
    step = quantization_step(tolerance)
    q = np.empty((k, numel), dtype=np.int64)
    pos = 0
    prev = None
    for i in range(k):
        if pos >= len(payload):
            raise DecodeError("payload truncated before sample stream")
        mode = payload[pos]
        pos += 1
        if mode not in (0, 1) or (mode == 1 and prev is None):
            raise DecodeError(f"invalid sample stream mode {mode}")
        slen, pos = _varint_decode_scalar(payload, pos)
        if pos + slen > len(payload):
            raise DecodeError("sample stream overruns payload")
        coeffs = _unpack_ints(payload[pos : pos + slen], coeff_len)
        pos += slen
        if mode == 1:
            coeffs = coeffs + prev
        prev = coeffs
        if use_block:
            q[i] = _inverse_block_transform(coeffs, shape).reshape(-1)
        else:
            q[i] = coeffs
    count, pos = _varint_decode_scalar(payload, pos)
    recon = (q.astype(np.float64) * step).astype(np.float32)
    if count:
        idx_end = pos
        seen = 0
        while seen < count:  # outlier index varints precede the value block
            if idx_end >= len(payload):
                raise DecodeError("truncated outlier index block")
            if not (payload[idx_end] & 0x80):
                seen += 1
            idx_end += 1
        gaps = _varint_decode(np.frombuffer(payload[pos:idx_end], dtype=np.uint8))
        if gaps.size != count:
            raise DecodeError("outlier index count mismatch")
        indices = np.cumsum(gaps.astype(np.int64))
        if indices[0] < 0 or indices[-1] >= k * numel or (np.diff(indices) < 1).any():
            raise DecodeError("outlier indices out of range")
        pos = idx_end
        if pos + 4 * count > len(payload):
            raise DecodeError("truncated outlier value block")
        values = np.frombuffer(payload[pos : pos + 4 * count], dtype="<f4")
        pos += 4 * count
        flat = recon.reshape(-1)
        flat[indices] = values
    if pos != len(payload):
        raise DecodeError("trailing bytes after chunk payload")
    recon = recon.reshape((k,) + shape)
    return [np.ascontiguousarray(recon[i]) for i in range(k)]


def decode_bytes(data: bytes) -> list[np.ndarray]:
    return decode(EncodedChunk.from_bytes(data))


def compression_ratio(chunk: EncodedChunk) -> float:
    """Encoded bytes over raw bytes; smaller is better."""
    return chunk.encoded_bytes / chunk.raw_bytes
