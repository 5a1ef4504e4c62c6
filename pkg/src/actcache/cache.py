"""On-disk dataset of cached activations with chunked, shuffle-friendly reads.

File layout (little-endian), full details in docs/FORMAT.md:

    header, fixed 128 bytes:
        magic "AFCACHE1" | version u32 | n u64 | k u32 | rank u32 |
        dims 8*u32 (zero padded) | tau f64 | transform u8 | aug kind u8 |
        label width u8 | seed u64 | 49 reserved zero bytes
    label block:  n * label-width unsigned little-endian integers
    chunk index:  ceil(n/k) records of 40 bytes:
        ordinal u32 | offset u64 | length u64 | crc32 u32 | first u64 | end u64
    augmentation metadata block:
        channel: gamma f64 | c u32 | x u32 | x*u32 indices | aug chunk index
        token:   alpha f64 | N u32 | aug chunk index
        (the aug chunk index, same 40-byte records, is present only when the
        per-sample payload is non-empty)
    chunk payloads: feature chunk and aug section per ordinal, interleaved
    file crc32 u32 over everything before it

Feature chunks are self-describing codec chunks; a channel aug section is a
codec chunk of the stored channels for the chunk's samples; a token aug
section is the samples' match records (u32 i, u32 j, f64 s each) followed
by a codec chunk of their stored tokens. Augmentation payloads are
compressed at the same tolerance as the features.
"""
from __future__ import annotations

import os
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np

from .channel_aug import ChannelAugData, ChannelSelection
from .codec import CodecParams, EncodedChunk, decode, encode
from .errors import (
    ActCacheError,
    CorruptionError,
    FormatError,
    InvalidConfigError,
    InvalidShapeError,
    ShapeMismatchError,
)
from .rng import SplitMix64, permutation, shuffled, stream_seed
from .tensors import round_half_away
from .token_aug import TokenAugData, TokenMatch, TokenSelection

CACHE_MAGIC = b"AFCACHE1"
CACHE_VERSION = 1
HEADER_BYTES = 128
MAX_RANK = 8
INDEX_ENTRY = struct.Struct("<IQQIQQ")
_HEADER = struct.Struct("<8sIQII8IdBBBQ49x")
_MATCH_RECORD = struct.Struct("<IId")
_AUG_KINDS = {"none": 0, "channel": 1, "token": 2}
_AUG_NAMES = {v: k for k, v in _AUG_KINDS.items()}
_LABEL_DTYPES = {1: "<u1", 2: "<u2", 4: "<u4", 8: "<u8"}


@dataclass(frozen=True)
class CacheHeader:
    """Parsed fixed header of a cache file."""

    version: int
    sample_shape: tuple[int, ...]
    sample_count: int
    chunk_size: int
    params: CodecParams
    aug_kind: str
    label_width: int
    seed: int

    @property
    def chunk_count(self) -> int:
        return -(-self.sample_count // self.chunk_size)


@dataclass(frozen=True)
class ChunkIndexEntry:
    """Location and checksum of one stored chunk span."""

    ordinal: int
    offset: int
    length: int
    crc32: int
    first_sample: int
    end_sample: int

    def pack(self) -> bytes:
        return INDEX_ENTRY.pack(
            self.ordinal, self.offset, self.length, self.crc32,
            self.first_sample, self.end_sample,
        )

    @classmethod
    def unpack(cls, data: bytes, offset: int) -> "ChunkIndexEntry":
        vals = INDEX_ENTRY.unpack_from(data, offset)
        return cls(*vals)


@dataclass(frozen=True)
class CachedSample:
    """One decoded sample: features, exact label, optional aug payload."""

    features: np.ndarray
    label: int
    aug: Optional[Union[ChannelSelection, TokenSelection]] = None


def _chunk_ranges(n: int, k: int) -> list[tuple[int, int]]:
    return [(i, min(n, i + k)) for i in range(0, n, k)]


def _encode_labels(labels: np.ndarray, width: int) -> bytes:
    if width not in _LABEL_DTYPES:
        raise InvalidConfigError(f"label width must be one of {sorted(_LABEL_DTYPES)}")
    if labels.size and (labels.min() < 0 or int(labels.max()) >= 1 << (8 * width)):
        raise InvalidConfigError(f"labels do not fit in {width} byte(s)")
    return labels.astype(_LABEL_DTYPES[width]).tobytes()


def _channel_meta_bytes(aug: ChannelAugData) -> bytes:
    idx = aug.indices.astype("<u4")
    return struct.pack("<dII", aug.gamma, aug.channel_count, idx.size) + idx.tobytes()


def _token_meta_bytes(aug: TokenAugData) -> bytes:
    return struct.pack("<dI", aug.alpha, aug.token_count)


def _validate_channel_aug(aug: ChannelAugData, n: int, shape: tuple[int, ...]) -> None:
    if len(shape) != 3:
        raise InvalidShapeError("channel augmentation needs (C, H, W) features")
    c, h, w = shape
    if aug.channel_count != c:
        raise ShapeMismatchError(f"selection covers {aug.channel_count} channels, features have {c}")
    if not 0.0 <= aug.gamma <= 1.0:
        raise InvalidConfigError(f"gamma must be in [0, 1], got {aug.gamma}")
    x = int(aug.indices.size)
    if x != round_half_away(aug.gamma * c):
        raise InvalidConfigError("index count disagrees with round(gamma * c)")
    if x:
        idx = np.asarray(aug.indices)
        if (np.diff(idx) <= 0).any() or idx[0] < 0 or idx[-1] >= c:
            raise InvalidConfigError("channel indices must be strictly increasing and < c")
        if aug.stored.shape != (n, x, h, w):
            raise ShapeMismatchError(
                f"stored channels are {aug.stored.shape}, expected {(n, x, h, w)}"
            )


def _validate_token_aug(aug: TokenAugData, n: int, shape: tuple[int, ...]) -> None:
    if len(shape) != 2:
        raise InvalidShapeError("token augmentation needs (N, D) features")
    n_token, dim = shape
    if aug.token_count != n_token:
        raise ShapeMismatchError(f"selection covers {aug.token_count} tokens, features have {n_token}")
    if not 0.0 <= aug.alpha <= 1.0:
        raise InvalidConfigError(f"alpha must be in [0, 1], got {aug.alpha}")
    m = round_half_away(aug.alpha * n_token)
    if aug.match_original.shape != (n, m) or aug.match_augmented.shape != (n, m):
        raise ShapeMismatchError(f"match arrays must be {(n, m)}")
    if aug.match_similarity.shape != (n, m):
        raise ShapeMismatchError(f"similarity array must be {(n, m)}")
    if m:
        if aug.stored.shape != (n, m, dim):
            raise ShapeMismatchError(f"stored tokens are {aug.stored.shape}, expected {(n, m, dim)}")
        if int(aug.match_original.max()) >= n_token or int(aug.match_augmented.max()) >= n_token:
            raise InvalidConfigError("match indices out of token range")


def build_cache(
    path,
    features,
    labels,
    *,
    tolerance: float,
    chunk_size: int = 2,
    transform: str = "block",
    seed: int = 0,
    label_width: int = 4,
    channel_aug: Optional[ChannelAugData] = None,
    token_aug: Optional[TokenAugData] = None,
    workers: int = 1,
) -> CacheHeader:
    """Compress a feature dataset into a cache file; returns its header.

    ``features`` is an (n, *shape) array or a sequence of same-shape
    tensors. The build is deterministic: identical inputs produce a
    byte-identical file. A failed build leaves no partial file behind.
    """
    try:
        feats = np.asarray(features, dtype=np.float32)
    except ValueError as exc:  # ragged sequence: sample shape drifted mid-stream
        raise ShapeMismatchError(f"samples do not share one shape: {exc}") from exc
    if feats.ndim < 2:
        raise InvalidShapeError("features must be (n, *sample_shape)")
    if not np.isfinite(feats).all():
        raise InvalidConfigError("features contain NaN or Inf")
    n = feats.shape[0]
    shape = tuple(feats.shape[1:])
    if n < 1:
        raise InvalidConfigError("cache needs at least one sample")
    if len(shape) > MAX_RANK:
        raise InvalidShapeError(f"sample rank {len(shape)} exceeds {MAX_RANK}")
    if chunk_size < 1:
        raise InvalidConfigError("chunk size must be >= 1")
    lab = np.asarray(labels)
    if lab.shape != (n,):
        raise ShapeMismatchError(f"labels must be ({n},), got {lab.shape}")
    if channel_aug is not None and token_aug is not None:
        raise InvalidConfigError("choose channel or token augmentation, not both")
    params = CodecParams(tolerance=tolerance, transform=transform)

    aug_kind = "none"
    payload_per_sample = 0
    if channel_aug is not None:
        _validate_channel_aug(channel_aug, n, shape)
        aug_kind = "channel"
        payload_per_sample = int(channel_aug.indices.size)
    elif token_aug is not None:
        _validate_token_aug(token_aug, n, shape)
        aug_kind = "token"
        payload_per_sample = round_half_away(token_aug.alpha * token_aug.token_count)

    ranges = _chunk_ranges(n, chunk_size)

    def encode_ordinal(span: tuple[int, int]) -> tuple[bytes, bytes]:
        first, end = span
        feat_bytes = encode(list(feats[first:end]), params).to_bytes()
        aug_bytes = b""
        if aug_kind == "channel" and payload_per_sample:
            aug_bytes = encode(list(channel_aug.stored[first:end]), params).to_bytes()
        elif aug_kind == "token" and payload_per_sample:
            records = bytearray()
            for s in range(first, end):
                for c in range(payload_per_sample):
                    records += _MATCH_RECORD.pack(
                        int(token_aug.match_original[s, c]),
                        int(token_aug.match_augmented[s, c]),
                        float(token_aug.match_similarity[s, c]),
                    )
            aug_bytes = bytes(records) + encode(list(token_aug.stored[first:end]), params).to_bytes()
        return feat_bytes, aug_bytes

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            encoded = list(pool.map(encode_ordinal, ranges))
    else:
        encoded = [encode_ordinal(span) for span in ranges]

    dims = list(shape) + [0] * (MAX_RANK - len(shape))
    header = _HEADER.pack(
        CACHE_MAGIC, CACHE_VERSION, n, chunk_size, len(shape), *dims,
        params.tolerance, params.transform_id, _AUG_KINDS[aug_kind],
        label_width, seed,
    )
    label_block = _encode_labels(lab, label_width)

    meta = b""
    if aug_kind == "channel":
        meta = _channel_meta_bytes(channel_aug)
    elif aug_kind == "token":
        meta = _token_meta_bytes(token_aug)
    has_aug_chunks = aug_kind != "none" and payload_per_sample > 0
    aug_index_len = INDEX_ENTRY.size * len(ranges) if has_aug_chunks else 0

    payload_start = (
        HEADER_BYTES + len(label_block) + INDEX_ENTRY.size * len(ranges)
        + len(meta) + aug_index_len
    )
    index_entries: list[ChunkIndexEntry] = []
    aug_entries: list[ChunkIndexEntry] = []
    offset = payload_start
    for ordinal, ((first, end), (feat_bytes, aug_bytes)) in enumerate(zip(ranges, encoded)):
        index_entries.append(ChunkIndexEntry(
            ordinal=ordinal, offset=offset, length=len(feat_bytes),
            crc32=zlib.crc32(feat_bytes), first_sample=first, end_sample=end,
        ))
        offset += len(feat_bytes)
        if has_aug_chunks:
            aug_entries.append(ChunkIndexEntry(
                ordinal=ordinal, offset=offset, length=len(aug_bytes),
                crc32=zlib.crc32(aug_bytes), first_sample=first, end_sample=end,
            ))
            offset += len(aug_bytes)

    blob = bytearray()
    blob += header
    blob += label_block
    for entry in index_entries:
        blob += entry.pack()
    blob += meta
    for entry in aug_entries:
        blob += entry.pack()
    for feat_bytes, aug_bytes in encoded:
        blob += feat_bytes
        if has_aug_chunks:
            blob += aug_bytes
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))

    target = Path(path)
    tmp = target.with_name(target.name + ".tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(blob)
        os.replace(tmp, target)
    except BaseException:
        if tmp.exists():
            tmp.unlink()
        raise
    return CacheHeader(
        version=CACHE_VERSION, sample_shape=shape, sample_count=n,
        chunk_size=chunk_size, params=params, aug_kind=aug_kind,
        label_width=label_width, seed=seed,
    )


class CacheHandle:
    """Read-side view of a cache file; safe for concurrent chunk reads."""

    def __init__(self, path, verify: bool = False):
        self.path = Path(path)
        if not self.path.exists():
            raise FileNotFoundError(f"missing file: {self.path}")
        self._fd: Optional[int] = os.open(self.path, os.O_RDONLY)
        try:
            self._file_size = os.fstat(self._fd).st_size
            self._parse(verify)
        except BaseException:
            os.close(self._fd)
            self._fd = None
            raise

    # -- lifecycle ---------------------------------------------------------

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __enter__(self) -> "CacheHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _pread(self, offset: int, length: int) -> bytes:
        if self._fd is None:
            raise ActCacheError("cache handle is closed")
        data = os.pread(self._fd, length, offset)
        if len(data) != length:
            raise CorruptionError(f"short read at offset {offset}")
        return data

    # -- parsing -----------------------------------------------------------

    def _parse(self, verify: bool) -> None:
        if self._file_size < HEADER_BYTES + 4:
            raise FormatError("file too small to be a cache")
        raw = self._pread(0, HEADER_BYTES)
        fields = _HEADER.unpack(raw)
        magic, version, n, k, rank = fields[0], fields[1], fields[2], fields[3], fields[4]
        dims = fields[5:13]
        tau, transform_id, aug_id, label_width, seed = fields[13:18]
        if magic != CACHE_MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != CACHE_VERSION:
            raise FormatError(f"unsupported version {version}")
        if not 1 <= rank <= MAX_RANK:
            raise FormatError(f"invalid rank {rank}")
        shape = tuple(int(d) for d in dims[:rank])
        if any(d < 1 for d in shape) or any(d != 0 for d in dims[rank:]):
            raise FormatError(f"invalid dimension list {dims}")
        if n < 1 or k < 1:
            raise FormatError("sample count and chunk size must be >= 1")
        if aug_id not in _AUG_NAMES:
            raise FormatError(f"unknown augmentation kind {aug_id}")
        if label_width not in _LABEL_DTYPES:
            raise FormatError(f"unsupported label width {label_width}")
        transform = "block" if transform_id == 1 else "none"
        self.header = CacheHeader(
            version=version, sample_shape=shape, sample_count=n, chunk_size=k,
            params=CodecParams(tolerance=tau, transform=transform),
            aug_kind=_AUG_NAMES[aug_id], label_width=label_width, seed=seed,
        )

        pos = HEADER_BYTES
        label_len = n * label_width
        chunks = self.header.chunk_count
        if self._file_size < pos + label_len + chunks * INDEX_ENTRY.size + 4:
            raise FormatError("file truncated in label block or index")
        label_raw = self._pread(pos, label_len)
        self.labels = np.frombuffer(label_raw, dtype=_LABEL_DTYPES[label_width]).astype(np.int64)
        pos += label_len
        index_raw = self._pread(pos, chunks * INDEX_ENTRY.size)
        pos += chunks * INDEX_ENTRY.size
        self.index = [
            ChunkIndexEntry.unpack(index_raw, i * INDEX_ENTRY.size) for i in range(chunks)
        ]
        expect_first = 0
        for i, entry in enumerate(self.index):
            if entry.ordinal != i:
                raise FormatError(f"index entry {i} has ordinal {entry.ordinal}")
            if entry.first_sample != expect_first or entry.end_sample <= entry.first_sample:
                raise FormatError(f"chunk {i} sample range is not a partition")
            expect_first = entry.end_sample
        if expect_first != n:
            raise FormatError("chunk sample ranges do not cover the dataset")

        # augmentation metadata
        self.channel_meta: Optional[ChannelSelection] = None
        self.token_alpha = 0.0
        self.token_count = 0
        self.payload_per_sample = 0
        self.aug_index: list[ChunkIndexEntry] = []
        if self.header.aug_kind == "channel":
            if self._file_size < pos + 16:
                raise FormatError("file truncated in channel metadata")
            gamma, c, x = struct.unpack("<dII", self._pread(pos, 16))
            pos += 16
            if c != shape[0]:
                raise FormatError("channel count disagrees with sample shape")
            if self._file_size < pos + 4 * x:
                raise FormatError("file truncated in channel index list")
            idx = np.frombuffer(self._pread(pos, 4 * x), dtype="<u4").astype(np.int64)
            pos += 4 * x
            if x and (idx[-1] >= c or (np.diff(idx) <= 0).any()):
                raise FormatError("stored channel indices are invalid")
            self.channel_meta = ChannelSelection(
                gamma=gamma, channel_count=c, indices=idx, stored=None
            )
            self.payload_per_sample = int(x)
        elif self.header.aug_kind == "token":
            if self._file_size < pos + 12:
                raise FormatError("file truncated in token metadata")
            alpha, n_token = struct.unpack("<dI", self._pread(pos, 12))
            pos += 12
            if n_token != shape[0]:
                raise FormatError("token count disagrees with sample shape")
            self.token_alpha = alpha
            self.token_count = int(n_token)
            self.payload_per_sample = round_half_away(alpha * n_token)
        if self.header.aug_kind != "none" and self.payload_per_sample > 0:
            need = chunks * INDEX_ENTRY.size
            if self._file_size < pos + need + 4:
                raise FormatError("file truncated in augmentation index")
            aug_raw = self._pread(pos, need)
            pos += need
            self.aug_index = [
                ChunkIndexEntry.unpack(aug_raw, i * INDEX_ENTRY.size) for i in range(chunks)
            ]
        self.payload_start = pos

        for entry in list(self.index) + list(self.aug_index):
            if entry.offset < self.payload_start or entry.offset + entry.length > self._file_size - 4:
                raise FormatError(f"chunk {entry.ordinal} span escapes the payload region")

        if verify:
            self.verify()

    # -- verification ------------------------------------------------------

    def verify(self) -> None:
        """Check the trailing file CRC and every chunk checksum."""
        body = self._pread(0, self._file_size - 4)
        (stored,) = struct.unpack("<I", self._pread(self._file_size - 4, 4))
        if zlib.crc32(body) != stored:
            raise CorruptionError("file checksum mismatch")
        for entry in self.index:
            span = self._pread(entry.offset, entry.length)
            if zlib.crc32(span) != entry.crc32:
                raise CorruptionError(f"chunk {entry.ordinal} checksum mismatch")
        for entry in self.aug_index:
            span = self._pread(entry.offset, entry.length)
            if zlib.crc32(span) != entry.crc32:
                raise CorruptionError(f"augmentation chunk {entry.ordinal} checksum mismatch")

    # -- reads ---------------------------------------------------------------

    def read_chunk(self, ordinal: int) -> list[CachedSample]:
        """Decode chunk ``ordinal`` with labels and aug payloads attached."""
        if not 0 <= ordinal < len(self.index):
            raise IndexError(f"chunk ordinal {ordinal} out of range [0, {len(self.index)})")
        entry = self.index[ordinal]
        span = self._pread(entry.offset, entry.length)
        if zlib.crc32(span) != entry.crc32:
            raise CorruptionError(f"chunk {ordinal} checksum mismatch")
        chunk = EncodedChunk.from_bytes(span)
        feats = decode(chunk)
        count = entry.end_sample - entry.first_sample
        if chunk.count != count or chunk.shape != self.header.sample_shape:
            raise CorruptionError(f"chunk {ordinal} metadata disagrees with the index")
        augs: list[Optional[Union[ChannelSelection, TokenSelection]]] = [None] * count
        if self.header.aug_kind == "channel":
            meta = self.channel_meta
            if self.payload_per_sample == 0:
                augs = [meta] * count
            else:
                stored = self._read_aug_span(ordinal)
                stored_chunk = EncodedChunk.from_bytes(stored)
                stored_feats = decode(stored_chunk)
                augs = [
                    ChannelSelection(
                        gamma=meta.gamma, channel_count=meta.channel_count,
                        indices=meta.indices, stored=stored_feats[i],
                    )
                    for i in range(count)
                ]
        elif self.header.aug_kind == "token":
            m = self.payload_per_sample
            if m == 0:
                augs = [
                    TokenSelection(alpha=self.token_alpha, token_count=self.token_count,
                                   matches=(), stored=None)
                ] * count
            else:
                span = self._read_aug_span(ordinal)
                records_len = count * m * _MATCH_RECORD.size
                if len(span) < records_len:
                    raise CorruptionError(f"augmentation chunk {ordinal} too short")
                stored_feats = decode(EncodedChunk.from_bytes(span[records_len:]))
                for s in range(count):
                    matches = []
                    for c in range(m):
                        off = (s * m + c) * _MATCH_RECORD.size
                        i, j, sim = _MATCH_RECORD.unpack_from(span, off)
                        matches.append(TokenMatch(original=i, matched=j, similarity=sim))
                    augs[s] = TokenSelection(
                        alpha=self.token_alpha, token_count=self.token_count,
                        matches=tuple(matches), stored=stored_feats[s],
                    )
        return [
            CachedSample(
                features=feats[i],
                label=int(self.labels[entry.first_sample + i]),
                aug=augs[i],
            )
            for i in range(count)
        ]

    def _read_aug_span(self, ordinal: int) -> bytes:
        entry = self.aug_index[ordinal]
        span = self._pread(entry.offset, entry.length)
        if zlib.crc32(span) != entry.crc32:
            raise CorruptionError(f"augmentation chunk {ordinal} checksum mismatch")
        return span


def open_cache(path, verify: bool = False) -> CacheHandle:
    """Open a cache file; ``verify`` checks all checksums eagerly."""
    return CacheHandle(path, verify=verify)


def read_chunk(handle: CacheHandle, ordinal: int) -> list[CachedSample]:
    return handle.read_chunk(ordinal)


def shuffled_epoch_iter(handle: CacheHandle, seed: int, prefetch: int = 0) -> Iterator[CachedSample]:
    """One epoch over all samples: seeded chunk order, seeded order inside
    each chunk, samples of a chunk always contiguous.

    ``prefetch`` > 0 decodes up to that many chunks ahead on worker
    threads without changing the emitted order.
    """
    order = permutation(handle.header.chunk_count, seed)

    def load(ordinal: int) -> list[CachedSample]:
        samples = handle.read_chunk(ordinal)
        within = shuffled(len(samples), SplitMix64(stream_seed(seed, ordinal)))
        return [samples[i] for i in within]

    if prefetch > 0:
        from collections import deque
        from itertools import islice

        with ThreadPoolExecutor(max_workers=min(prefetch, 8)) as pool:
            pending = deque()
            it = iter(order)
            for ordinal in islice(it, prefetch):
                pending.append(pool.submit(load, ordinal))
            while pending:
                fut = pending.popleft()
                upcoming = next(it, None)
                if upcoming is not None:
                    pending.append(pool.submit(load, upcoming))
                yield from fut.result()
    else:
        for ordinal in order:
            yield from load(ordinal)


def read_all(handle: CacheHandle) -> tuple[np.ndarray, np.ndarray, list]:
    """All samples in ordinal order: (features, labels, aug payloads)."""
    feats = []
    labels = []
    augs = []
    for ordinal in range(handle.header.chunk_count):
        for sample in handle.read_chunk(ordinal):
            feats.append(sample.features)
            labels.append(sample.label)
            augs.append(sample.aug)
    return np.stack(feats), np.asarray(labels, dtype=np.int64), augs
