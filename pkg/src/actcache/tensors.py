"""Dense float32 activation tensors and the elementary ops everything else uses.

Tensors are plain C-contiguous numpy float32 arrays; ``as_tensor`` is the
single validation gate (finite values, non-empty shape, positive dims).
CNN feature maps are laid out channel-first (C, H, W); token matrices are
(N, D); the last axis of a spatial tensor is width.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateVectorError,
    InvalidConfigError,
    InvalidShapeError,
    InvalidValueError,
    ShapeMismatchError,
)


def as_tensor(data, shape=None) -> np.ndarray:
    """Validate and normalize an array-like into a C-contiguous float32 tensor.

    Rejects rank-0 inputs, zero-size dimensions, and non-finite values.
    """
    arr = np.asarray(data, dtype=np.float32)
    if shape is not None:
        arr = arr.reshape(shape)
    if arr.ndim == 0:
        raise InvalidShapeError("tensor rank must be >= 1")
    if any(d <= 0 for d in arr.shape):
        raise InvalidShapeError(f"dimensions must be positive, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise InvalidValueError("tensor contains NaN or Inf")
    return np.ascontiguousarray(arr)


def flip_h(t) -> np.ndarray:
    """Reverse the width (last) axis. Requires rank >= 2."""
    arr = as_tensor(t)
    if arr.ndim < 2:
        raise InvalidShapeError("horizontal flip needs rank >= 2")
    return np.ascontiguousarray(arr[..., ::-1])


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two equal-length vectors, clipped to [-1, 1]."""
    va = np.asarray(a, dtype=np.float64).ravel()
    vb = np.asarray(b, dtype=np.float64).ravel()
    if va.shape != vb.shape:
        raise ShapeMismatchError(f"vector lengths differ: {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError("cosine similarity of a zero-norm vector")
    s = float(np.dot(va, vb) / (na * nb))
    return min(1.0, max(-1.0, s))


def round_half_away(value: float) -> int:
    """Round to nearest integer, halves away from zero (round(0.5) == 1)."""
    if value >= 0:
        return int(math.floor(value + 0.5))
    return -int(math.floor(-value + 0.5))


@dataclass(frozen=True)
class PerturbConfig:
    """Knobs for the extra, post-replacement perturbations."""

    noise_sigma: float = 0.0
    blur_radius: float = 0.0
    crop_margin: int = 0


def _reflect_indices(n: int, lo: int, hi: int) -> np.ndarray:
    """Index map implementing reflection padding of a length-n axis."""
    idx = np.arange(-lo, n + hi)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def _reflect_pad_2d(x: np.ndarray, top: int, bottom: int, left: int, right: int) -> np.ndarray:
    h, w = x.shape[-2:]
    yi = _reflect_indices(h, top, bottom)
    xi = _reflect_indices(w, left, right)
    return x[..., yi[:, None], xi[None, :]]


def _gaussian_blur(x: np.ndarray, sigma: float) -> np.ndarray:
    halfw = max(1, int(math.ceil(3.0 * sigma)))
    offs = np.arange(-halfw, halfw + 1, dtype=np.float64)
    ker = np.exp(-0.5 * (offs / sigma) ** 2)
    ker /= ker.sum()
    out = x.astype(np.float64)
    for axis in (-2, -1):
        moved = np.moveaxis(out, axis, -1)
        n = moved.shape[-1]
        idx = _reflect_indices(n, halfw, halfw)
        padded = moved[..., idx]
        win = np.lib.stride_tricks.sliding_window_view(padded, len(ker), axis=-1)
        moved = np.einsum("...kw,w->...k", win, ker)
        out = np.moveaxis(moved, -1, axis)
    return out.astype(np.float32)


def seeded_perturb(t, config: PerturbConfig, seed: int) -> np.ndarray:
    """Crop-and-pad-back, gaussian blur, then gaussian noise, all seeded.

    Shape is always preserved: the crop picks a seeded window of size
    (H - margin, W - margin) and reflection-pads it back. An all-zero
    config returns the input unchanged.
    """
    arr = as_tensor(t)
    if config.noise_sigma < 0 or config.blur_radius < 0 or config.crop_margin < 0:
        raise InvalidConfigError("perturbation magnitudes must be non-negative")
    margin = int(config.crop_margin)
    if margin > 0 or config.blur_radius > 0:
        if arr.ndim < 2:
            raise InvalidShapeError("spatial perturbations need rank >= 2")
    if margin > 0 and margin >= min(arr.shape[-2:]):
        raise InvalidConfigError(
            f"crop margin {margin} out of range for spatial dims {arr.shape[-2:]}"
        )
    rng = np.random.default_rng(seed)
    out = arr.copy()
    if margin > 0:
        oy = int(rng.integers(0, margin + 1))
        ox = int(rng.integers(0, margin + 1))
        h, w = out.shape[-2:]
        win = out[..., oy : oy + h - margin, ox : ox + w - margin]
        out = np.ascontiguousarray(_reflect_pad_2d(win, oy, margin - oy, ox, margin - ox))
    if config.blur_radius > 0:
        out = _gaussian_blur(out, float(config.blur_radius))
    if config.noise_sigma > 0:
        out = out + rng.normal(0.0, config.noise_sigma, size=out.shape).astype(np.float32)
    return np.ascontiguousarray(out.astype(np.float32, copy=False))
