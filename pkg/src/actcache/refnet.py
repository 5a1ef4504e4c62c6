"""Desk-scale verification rig: a frozen two-stage conv feature extractor,
a synthetic labeled dataset, and a trainable linear probe.

The extractor stands in for the frozen part of a real backbone (forward
only, weights fixed at construction); the probe stands in for the unfrozen
head. Both are deterministic functions of their seeds, which keeps every
downstream comparison reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, InvalidShapeError, ShapeMismatchError
from .rng import SplitMix64, shuffled

STAGE_CHANNELS = (8, 16)
_KERNEL = 3


@dataclass(frozen=True)
class RefNet:
    """Two conv stages (3x3 stride 1 pad 1, ReLU, 2x2 max-pool), frozen."""

    seed: int
    w1: np.ndarray  # (8, 3, 3, 3)
    b1: np.ndarray  # (8,)
    w2: np.ndarray  # (16, 8, 3, 3)
    b2: np.ndarray  # (16,)


def make_refnet(seed: int) -> RefNet:
    """Draw frozen weights from a seeded Gaussian with sigma = 1/sqrt(fan-in)."""
    rng = np.random.default_rng(seed)
    c1, c2 = STAGE_CHANNELS
    fan1 = 3 * _KERNEL * _KERNEL
    fan2 = c1 * _KERNEL * _KERNEL
    w1 = rng.normal(0.0, 1.0 / np.sqrt(fan1), size=(c1, 3, _KERNEL, _KERNEL))
    b1 = rng.normal(0.0, 1.0 / np.sqrt(fan1), size=(c1,))
    w2 = rng.normal(0.0, 1.0 / np.sqrt(fan2), size=(c2, c1, _KERNEL, _KERNEL))
    b2 = rng.normal(0.0, 1.0 / np.sqrt(fan2), size=(c2,))
    return RefNet(
        seed=seed,
        w1=w1.astype(np.float32), b1=b1.astype(np.float32),
        w2=w2.astype(np.float32), b2=b2.astype(np.float32),
    )


def _conv_relu_pool(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 conv with zero padding 1, ReLU, then 2x2 max-pool. x: (N, C, H, W)."""
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (_KERNEL, _KERNEL), axis=(2, 3))
    out = np.einsum("nchwij,ocij->nohw", windows, w, optimize=True) + b[None, :, None, None]
    out = np.maximum(out, 0.0)
    n, c, h, wdt = out.shape
    pooled = out.reshape(n, c, h // 2, 2, wdt // 2, 2).max(axis=(3, 5))
    return pooled.astype(np.float32)


def forward(net: RefNet, x, up_to_stage: int = 2) -> np.ndarray:
    """Frozen forward pass through the first ``up_to_stage`` stages.

    Accepts a single (3, H, W) image or an (N, 3, H, W) batch and returns
    the matching rank. H and W must be divisible by 2**up_to_stage.
    """
    if up_to_stage not in (1, 2):
        raise InvalidConfigError(f"up_to_stage must be 1 or 2, got {up_to_stage}")
    arr = np.asarray(x, dtype=np.float32)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise InvalidShapeError(f"expected (N, 3, H, W) input, got {arr.shape}")
    h, w = arr.shape[2], arr.shape[3]
    divisor = 2**up_to_stage
    if h % divisor or w % divisor:
        raise InvalidShapeError(
            f"spatial dims {(h, w)} not divisible by {divisor} for {up_to_stage} stage(s)"
        )
    out = _conv_relu_pool(arr, net.w1, net.b1)
    if up_to_stage == 2:
        out = _conv_relu_pool(out, net.w2, net.b2)
    return out[0] if single else out


def gen_synthetic_dataset(
    seed: int, n: int, classes: int = 4, size: int = 32
) -> tuple[np.ndarray, np.ndarray]:
    """Class-balanced images of oriented patterns plus seeded noise.

    Class 0 is horizontal stripes (mirror-symmetric); the others (vertical
    stripes with random phase, diagonal ramps, off-center blobs) change
    pixel content under a horizontal flip while keeping their label, which
    is what makes flip augmentation informative downstream.
    """
    if classes < 2 or classes > 4:
        raise InvalidConfigError("classes must be between 2 and 4")
    if n % classes:
        raise InvalidConfigError(f"n={n} is not divisible by {classes} classes")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(
        np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64),
        indexing="ij",
    )
    gains = np.array([1.0, 0.8, 0.6])
    images = np.zeros((n, 3, size, size), dtype=np.float32)
    labels = np.zeros(n, dtype=np.int64)
    for i in range(n):
        cls = i % classes
        phase = rng.uniform(0, 2 * np.pi)
        freq = rng.uniform(1.5, 3.0)
        if cls == 0:
            base = np.sin(2 * np.pi * freq * yy / size + phase)
        elif cls == 1:
            base = np.sin(2 * np.pi * freq * xx / size + phase)
        elif cls == 2:
            slope = rng.uniform(0.6, 1.4)
            base = (slope * xx + yy) / size - 1.0 + 0.3 * np.sin(phase)
        else:
            cy = rng.uniform(0.25, 0.75) * size
            cx = rng.uniform(0.1, 0.4) * size  # blob stays in the left half
            sigma = rng.uniform(0.12, 0.2) * size
            base = 1.6 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2)) - 0.4
        noise = rng.normal(0.0, 0.25, size=(3, size, size))
        images[i] = (gains[:, None, None] * base[None] + noise).astype(np.float32)
        labels[i] = cls
    return images, labels


@dataclass
class LinearProbe:
    """Single linear layer trained with SGD on softmax cross-entropy."""

    weight: np.ndarray  # (features, classes), float64
    bias: np.ndarray  # (classes,), float64


def init_probe(n_features: int, n_classes: int, seed: int) -> LinearProbe:
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(n_features)
    return LinearProbe(
        weight=rng.normal(0.0, scale, size=(n_features, n_classes)),
        bias=np.zeros(n_classes, dtype=np.float64),
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_gradients(
    probe: LinearProbe, features: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy over a batch plus gradients w.r.t. weight and bias."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    logits = x @ probe.weight + probe.bias
    probs = _softmax(logits)
    batch = x.shape[0]
    nll = -np.log(np.maximum(probs[np.arange(batch), y], 1e-300))
    delta = probs.copy()
    delta[np.arange(batch), y] -= 1.0
    delta /= batch
    return float(nll.mean()), x.T @ delta, delta.sum(axis=0)


def _flatten(features) -> np.ndarray:
    arr = np.asarray(features, dtype=np.float32)
    if arr.ndim < 2 or arr.shape[0] == 0:
        raise InvalidShapeError("features must be a non-empty (n, ...) array")
    return arr.reshape(arr.shape[0], -1)


def train_linear_probe(
    features,
    labels,
    epochs: int,
    learning_rate: float,
    seed: int,
    *,
    batch_size: int = 64,
    probe: LinearProbe | None = None,
) -> LinearProbe:
    """Deterministic SGD training; per-epoch order is a seeded shuffle.

    The shuffle depends only on (seed, n), so training on the same feature
    array in the same order always produces bit-identical weights.
    """
    x = _flatten(features)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (x.shape[0],):
        raise ShapeMismatchError(f"labels must be ({x.shape[0]},), got {y.shape}")
    n_classes = int(y.max()) + 1 if probe is None else probe.bias.shape[0]
    if probe is None:
        probe = init_probe(x.shape[1], n_classes, seed)
    weight = probe.weight.copy()
    bias = probe.bias.copy()
    order_rng = SplitMix64(seed)
    for _ in range(epochs):
        order = shuffled(x.shape[0], order_rng)
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            xb = x[batch].astype(np.float64)
            yb = y[batch]
            logits = xb @ weight + bias
            probs = _softmax(logits)
            delta = probs
            delta[np.arange(len(batch)), yb] -= 1.0
            delta /= len(batch)
            weight -= learning_rate * (xb.T @ delta)
            bias -= learning_rate * delta.sum(axis=0)
    return LinearProbe(weight=weight, bias=bias)


def evaluate(probe: LinearProbe, features, labels) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class."""
    x = _flatten(features).astype(np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (x.shape[0],):
        raise ShapeMismatchError(f"labels must be ({x.shape[0]},), got {y.shape}")
    pred = np.argmax(x @ probe.weight + probe.bias, axis=1)
    return float((pred == y).mean())
