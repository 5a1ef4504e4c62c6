"""Raw tensor dump files: the CLI's uncompressed input format.

Layout (little-endian): rank u32 | dims rank*u32 | count u64 | packed
float32 sample data in row-major order. Labels travel in a sidecar text
file, one integer per line.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidShapeError

MAX_RANK = 8


def write_tensor_dump(path, tensors) -> Path:
    arr = np.asarray(tensors, dtype=np.float32)
    if arr.ndim < 2:
        raise InvalidShapeError("dump needs an (n, *sample_shape) array")
    shape = arr.shape[1:]
    if len(shape) > MAX_RANK:
        raise InvalidShapeError(f"sample rank {len(shape)} exceeds {MAX_RANK}")
    target = Path(path)
    with open(target, "wb") as f:
        f.write(struct.pack("<I", len(shape)))
        f.write(struct.pack(f"<{len(shape)}I", *shape))
        f.write(struct.pack("<Q", arr.shape[0]))
        f.write(arr.astype("<f4", copy=False).tobytes())
    return target


def read_tensor_dump(path) -> np.ndarray:
    target = Path(path)
    if not target.exists():
        raise FileNotFoundError(f"missing file: {target}")
    data = target.read_bytes()
    if len(data) < 4:
        raise FormatError("dump truncated in rank field")
    (rank,) = struct.unpack_from("<I", data, 0)
    if not 1 <= rank <= MAX_RANK:
        raise FormatError(f"invalid dump rank {rank}")
    if len(data) < 4 + 4 * rank + 8:
        raise FormatError("dump truncated in header")
    shape = struct.unpack_from(f"<{rank}I", data, 4)
    (count,) = struct.unpack_from("<Q", data, 4 + 4 * rank)
    start = 4 + 4 * rank + 8
    numel = int(np.prod(shape, dtype=np.int64))
    expected = count * numel * 4
    if len(data) != start + expected:
        raise FormatError(
            f"dump holds {len(data) - start} payload bytes, expected {expected}"
        )
    flat = np.frombuffer(data, dtype="<f4", offset=start)
    return flat.reshape((count,) + tuple(int(d) for d in shape)).copy()


def write_labels(path, labels) -> Path:
    target = Path(path)
    arr = np.asarray(labels, dtype=np.int64)
    with open(target, "w") as f:
        for v in arr:
            f.write(f"{int(v)}\n")
    return target


def read_labels(path) -> np.ndarray:
    target = Path(path)
    if not target.exists():
        raise FileNotFoundError(f"missing file: {target}")
    values = []
    with open(target) as f:
        for line_no, line in enumerate(f, 1):
            text = line.strip()
            if not text:
                continue
            try:
                values.append(int(text))
            except ValueError as exc:
                raise FormatError(f"label file line {line_no} is not an integer") from exc
    return np.asarray(values, dtype=np.int64)
