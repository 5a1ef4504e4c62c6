"""Compression policy per freeze stage, compressibility profiling, and
storage/compute cost accounting.

The recommended policy is a single tolerance for every stage: deeper
activations compress better under the same tolerance, so the achieved
ratio improves on its own as freezing advances. Per-stage overrides exist
for experimentation.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .codec import CodecParams, compression_ratio, decode, encode
from .errors import InsufficientDataError, InvalidConfigError


@dataclass(frozen=True)
class FreezeEvent:
    """One freeze point: stage ordinal, the epoch it fires, its cache tolerance."""

    stage_id: int
    epoch: int
    tolerance: float


@dataclass(frozen=True)
class FreezeSchedule:
    """Ordered freeze events; stage ids strictly increase, epochs never decrease."""

    events: tuple[FreezeEvent, ...]

    def __post_init__(self):
        prev_stage, prev_epoch = None, None
        for ev in self.events:
            if ev.tolerance < 0:
                raise InvalidConfigError("tolerances must be >= 0")
            if prev_stage is not None and ev.stage_id <= prev_stage:
                raise InvalidConfigError("stage ids must strictly increase")
            if prev_epoch is not None and ev.epoch < prev_epoch:
                raise InvalidConfigError("freeze epochs must be non-decreasing")
            prev_stage, prev_epoch = ev.stage_id, ev.epoch


@dataclass(frozen=True)
class CompressionPolicy:
    """Default tolerance plus optional per-stage overrides."""

    default_tolerance: float
    overrides: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.default_tolerance < 0 or any(v < 0 for v in self.overrides.values()):
            raise InvalidConfigError("tolerances must be >= 0")


def tolerance_for(stage_id: int, policy: CompressionPolicy) -> float:
    """Stage override if present, else the policy default."""
    return policy.overrides.get(stage_id, policy.default_tolerance)


@dataclass(frozen=True)
class StageCost:
    """Per-stage training cost inputs.

    ``flops_per_sample`` covers forward+backward of the unfrozen remainder
    for one sample; decompression or activation-generation overheads enter
    as explicit extra stage entries.
    """

    stage_id: int
    flops_per_sample: float
    memory: float
    epochs: float
    samples: float

    def __post_init__(self):
        if min(self.flops_per_sample, self.memory, self.epochs, self.samples) < 0:
            raise InvalidConfigError("stage cost fields must be non-negative")

    @property
    def total_flops(self) -> float:
        return self.flops_per_sample * self.samples * self.epochs


@dataclass(frozen=True)
class CostTotals:
    total_flops: float
    average_memory: float
    minimum_memory: float


def cost_totals(stages: Sequence[StageCost]) -> CostTotals:
    """Totals over a freeze schedule: summed FLOPs, epoch-weighted mean
    memory, and the resident memory of the final stage."""
    if not stages:
        raise InvalidConfigError("cost accounting needs at least one stage")
    total = 0.0
    mem_epochs = 0.0
    epochs = 0.0
    for st in stages:
        total += st.total_flops
        mem_epochs += st.memory * st.epochs
        epochs += st.epochs
    avg = mem_epochs / epochs if epochs > 0 else 0.0
    return CostTotals(
        total_flops=total, average_memory=avg, minimum_memory=stages[-1].memory
    )


@dataclass(frozen=True)
class ProfileRow:
    """One compressibility measurement: ratio and wall-clock costs."""

    chunk_size: int
    ratio: float
    encode_s: float
    decode_s_per_sample: float


def profile_compressibility(
    samples,
    tolerance: float,
    chunk_sizes: Iterable[int],
    *,
    transform: str = "block",
) -> list[ProfileRow]:
    """Aggregate compression ratio and timings per chunk size.

    Ratios are deterministic given the inputs; timings are advisory
    wall-clock measurements (chunks are processed sequentially so the
    numbers stay meaningful).
    """
    data = np.asarray(samples, dtype=np.float32)
    if data.ndim < 2:
        raise InvalidConfigError("profiling needs (n, *sample_shape) data")
    sizes = sorted(set(int(s) for s in chunk_sizes))
    if not sizes or sizes[0] < 1:
        raise InvalidConfigError("chunk sizes must be positive")
    n = data.shape[0]
    if n < sizes[-1]:
        raise InsufficientDataError(
            f"need at least {sizes[-1]} samples, got {n}"
        )
    params = CodecParams(tolerance=tolerance, transform=transform)
    rows = []
    for k in sizes:
        encoded = []
        t0 = time.perf_counter()
        for first in range(0, n, k):
            chunk_samples = list(data[first : min(n, first + k)])
            encoded.append(encode(chunk_samples, params))
        t_enc = time.perf_counter() - t0
        t0 = time.perf_counter()
        for chunk in encoded:
            decode(chunk)
        t_dec = time.perf_counter() - t0
        total_encoded = sum(c.encoded_bytes for c in encoded)
        total_raw = sum(c.raw_bytes for c in encoded)
        rows.append(ProfileRow(
            chunk_size=k, ratio=total_encoded / total_raw,
            encode_s=t_enc, decode_s_per_sample=t_dec / n,
        ))
    return rows


def expansion_ratio(
    input_shape: Sequence[int],
    input_bytes_per_element: float,
    activation_shape: Sequence[int],
    activation_bytes_per_element: float,
) -> float:
    """Stored-activation bytes over original-input bytes for one sample."""
    if any(d <= 0 for d in input_shape) or any(d <= 0 for d in activation_shape):
        raise InvalidConfigError("shapes must have positive dimensions")
    in_bytes = float(np.prod(input_shape, dtype=np.float64)) * input_bytes_per_element
    act_bytes = float(np.prod(activation_shape, dtype=np.float64)) * activation_bytes_per_element
    return act_bytes / in_bytes
