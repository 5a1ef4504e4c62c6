"""Similarity-aware channel augmentation for cached CNN feature maps.

Some convolution kernels commute with horizontal flips (flipping the input
flips the feature map) and some do not. Channels are scored with a global
SSIM between the feature map of the flipped input and the flipped feature
map of the original input; the lowest-scoring (most flip-sensitive)
channels are stored so that flip augmentation can replace them with the
true values instead of a distorted mirror.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    AugmentationUnavailableError,
    InvalidConfigError,
    InvalidShapeError,
    ShapeMismatchError,
)
from .rng import permutation
from .tensors import as_tensor, flip_h, round_half_away


@dataclass(frozen=True)
class ChannelSelection:
    """Which channels of a sample are stored, plus the stored values.

    ``indices`` is strictly increasing; ``stored`` rows align with it.
    ``stored`` is None for dataset-level metadata not yet attached to a
    sample.
    """

    gamma: float
    channel_count: int
    indices: np.ndarray
    stored: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ChannelAugData:
    """Dataset-level augmentation payload handed to the cache builder."""

    gamma: float
    channel_count: int
    indices: np.ndarray
    stored: np.ndarray  # (n, x, H, W), float32


def ssim(a, b) -> float:
    """Global single-window SSIM between two equal-shape channels.

    Uses population variance/covariance and a dynamic range L taken from
    the actual min/max over both channels; identical constant channels
    (L == 0) score 1.
    """
    ca = np.asarray(a, dtype=np.float64)
    cb = np.asarray(b, dtype=np.float64)
    if ca.shape != cb.shape:
        raise ShapeMismatchError(f"channel shapes differ: {ca.shape} vs {cb.shape}")
    if ca.size < 2:
        raise InvalidShapeError("ssim needs at least 2 elements")
    lo = min(ca.min(), cb.min())
    hi = max(ca.max(), cb.max())
    lrange = hi - lo
    if lrange == 0.0:
        return 1.0
    c1 = (0.01 * lrange) ** 2
    c2 = (0.03 * lrange) ** 2
    mu_a = ca.mean()
    mu_b = cb.mean()
    var_a = ca.var()
    var_b = cb.var()
    cov = ((ca - mu_a) * (cb - mu_b)).mean()
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(num / den)


def score_channels(f_oi, f_fi) -> np.ndarray:
    """Per-channel SSIM between flipped-input features and flipped features.

    Low scores mark flip-sensitive channels.
    """
    a = as_tensor(f_oi)
    b = as_tensor(f_fi)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"feature shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3:
        raise InvalidShapeError(f"expected (C, H, W) features, got {a.shape}")
    flipped = flip_h(a)
    return np.array([ssim(b[c], flipped[c]) for c in range(a.shape[0])])


def select_sensitive_channels(scores, gamma: float) -> np.ndarray:
    """Indices of the round(gamma * c) lowest-scoring channels, ascending.

    Ties break toward the lower channel index; rounding is half away from
    zero.
    """
    s = np.asarray(scores, dtype=np.float64)
    if not 0.0 <= gamma <= 1.0:
        raise InvalidConfigError(f"gamma must be in [0, 1], got {gamma}")
    c = s.size
    x = round_half_away(gamma * c)
    if x == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(c), s))  # score ascending, index breaks ties
    return np.sort(order[:x]).astype(np.int64)


def plan_channel_augmentation(
    f_oi_batch,
    f_fi_batch,
    gamma: float,
    *,
    sample_count: int = 256,
    seed: int = 0,
) -> ChannelAugData:
    """Pick one channel selection for a whole dataset and gather its payload.

    Scores are averaged over a seeded subset of at most ``sample_count``
    samples (summed in ascending sample order so the result is independent
    of any scoring parallelism), then the lowest-mean channels are selected.
    The stored payload for every sample is its flipped-input feature rows at
    the selected indices.
    """
    oi = np.asarray(f_oi_batch, dtype=np.float32)
    fi = np.asarray(f_fi_batch, dtype=np.float32)
    if oi.shape != fi.shape:
        raise ShapeMismatchError(f"batch shapes differ: {oi.shape} vs {fi.shape}")
    if oi.ndim != 4:
        raise InvalidShapeError(f"expected (n, C, H, W) batches, got {oi.shape}")
    n, channels = oi.shape[0], oi.shape[1]
    subset = min(sample_count, n)
    chosen = sorted(permutation(n, seed)[:subset])
    total = np.zeros(channels, dtype=np.float64)
    for idx in chosen:
        total += score_channels(oi[idx], fi[idx])
    indices = select_sensitive_channels(total / subset, gamma)
    stored = np.ascontiguousarray(fi[:, indices])
    return ChannelAugData(
        gamma=float(gamma), channel_count=channels, indices=indices, stored=stored
    )


def apply_flip_augmentation(features, selection: ChannelSelection) -> np.ndarray:
    """Flip the feature map and overwrite the selected channels with stored ones.

    Unselected channels are purely flipped; an empty selection is a plain
    flip. Raises when the sample has no stored payload.
    """
    f = as_tensor(features)
    if f.ndim != 3:
        raise InvalidShapeError(f"expected (C, H, W) features, got {f.shape}")
    if selection.indices.size and selection.stored is None:
        raise AugmentationUnavailableError("sample has no stored channel payload")
    out = flip_h(f)
    if selection.indices.size:
        stored = as_tensor(selection.stored)
        if stored.shape != (selection.indices.size,) + f.shape[1:]:
            raise ShapeMismatchError(
                f"stored channels {stored.shape} do not match selection over {f.shape}"
            )
        out[selection.indices] = stored
    return out
