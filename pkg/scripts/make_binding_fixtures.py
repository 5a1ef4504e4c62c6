#!/usr/bin/env python3
"""Generate the cross-implementation fixtures for the TypeScript bindings.

Writes frontend/test/fixtures/: 100 tensors with their canonical encoded
chunks (byte-fidelity corpus), two small cache files with golden iteration
orders, and augmentation application cases with expected outputs.
"""
import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from actcache.cache import build_cache, open_cache, shuffled_epoch_iter  # noqa: E402
from actcache.channel_aug import ChannelAugData, ChannelSelection, apply_flip_augmentation  # noqa: E402
from actcache.codec import CodecParams, encode  # noqa: E402
from actcache.token_aug import (  # noqa: E402
    TokenMatch,
    TokenSelection,
    apply_token_augmentation,
    plan_token_augmentation_batch,
)

ROOT = Path(__file__).resolve().parents[1]
OUT = ROOT / "frontend" / "test" / "fixtures"


def fidelity_corpus():
    rng = np.random.default_rng(4242)
    shapes = [(4, 8, 8), (3, 16, 16), (6, 5, 7), (16, 4), (12, 12), (33,), (2, 3, 4, 5)]
    taus = [0.0, 1e-1, 1e-2, 1e-3]
    cases = []
    tensor_blob = bytearray()
    chunk_blob = bytearray()
    for i in range(100):
        shape = shapes[i % len(shapes)]
        tau = taus[i % len(taus)]
        transform = "block" if i % 3 else "none"
        kind = i % 5
        if kind == 0:
            t = rng.uniform(-1, 1, shape)
        elif kind == 1:
            t = rng.normal(0, 2.5, shape)
        elif kind == 2:
            t = np.sin(np.linspace(0, 6 * np.pi, int(np.prod(shape))) + i).reshape(shape) * 2
        elif kind == 3:
            t = rng.normal(size=shape) * (rng.uniform(size=shape) < 0.2)
        else:
            t = rng.uniform(-1, 1, shape) * 10.0 ** rng.integers(-2, 6, shape)
        t = t.astype(np.float32)
        if tau == 0.0 and kind == 3:
            flat = t.reshape(-1)
            flat[: min(4, flat.size)] = np.array([1e-42, 2.0**-149, 2.0**20, -0.0], np.float32)[
                : min(4, flat.size)
            ]
        k = [1, 1, 2, 1, 4][i % 5]
        samples = [t]
        for extra in range(1, k):
            samples.append(
                (t + rng.normal(0, 0.01, shape)).astype(np.float32)
            )
        chunk = encode(samples, CodecParams(tolerance=tau, transform=transform)).to_bytes()
        raw = np.stack(samples).astype("<f4").tobytes()
        cases.append({
            "shape": list(shape), "tau": tau, "transform": transform, "k": k,
            "tensor_offset": len(tensor_blob), "tensor_length": len(raw),
            "chunk_offset": len(chunk_blob), "chunk_length": len(chunk),
        })
        tensor_blob += raw
        chunk_blob += chunk
    (OUT / "tensors.bin").write_bytes(bytes(tensor_blob))
    (OUT / "chunks.bin").write_bytes(bytes(chunk_blob))
    (OUT / "fidelity_manifest.json").write_text(json.dumps({"cases": cases}, indent=1))


def cache_fixtures():
    rng = np.random.default_rng(77)
    n, shape, tau, k = 8, (4, 8, 8), 1e-2, 2
    feats = rng.uniform(-1, 1, (n,) + shape).astype(np.float32)
    stored_src = rng.uniform(-1, 1, (n,) + shape).astype(np.float32)
    indices = np.array([1, 3], dtype=np.int64)
    aug = ChannelAugData(
        gamma=0.5, channel_count=4, indices=indices,
        stored=np.ascontiguousarray(stored_src[:, indices]),
    )
    build_cache(OUT / "cache_channel.afc", feats, np.arange(n), tolerance=tau,
                chunk_size=k, seed=5, channel_aug=aug)
    (OUT / "cache_channel_features.bin").write_bytes(feats.astype("<f4").tobytes())

    n_token, dim = 6, 4
    t_ori = rng.normal(size=(n, n_token, dim)).astype(np.float32)
    t_aug = rng.normal(size=(n, n_token, dim)).astype(np.float32)
    plan = plan_token_augmentation_batch(t_ori, t_aug, alpha=0.5)
    build_cache(OUT / "cache_token.afc", t_ori, np.arange(n) + 10, tolerance=tau,
                chunk_size=3, seed=6, token_aug=plan)
    (OUT / "cache_token_features.bin").write_bytes(t_ori.astype("<f4").tobytes())

    golden = {}
    for name in ("cache_channel.afc", "cache_token.afc"):
        with open_cache(OUT / name) as handle:
            orders = {}
            for seed in (0, 7, 123456789):
                orders[str(seed)] = [s.label for s in shuffled_epoch_iter(handle, seed)]
            golden[name] = {
                "n": handle.header.sample_count, "k": handle.header.chunk_size,
                "tau": handle.header.params.tolerance, "orders": orders,
            }
    (OUT / "iterate_golden.json").write_text(json.dumps(golden, indent=1))


def aug_cases():
    rng = np.random.default_rng(99)
    f = rng.normal(size=(4, 6, 6)).astype(np.float32)
    stored = rng.normal(size=(2, 6, 6)).astype(np.float32)
    indices = np.array([0, 2], dtype=np.int64)
    sel = ChannelSelection(gamma=0.5, channel_count=4, indices=indices, stored=stored)
    out = apply_flip_augmentation(f, sel)
    (OUT / "aug_channel_input.bin").write_bytes(f.astype("<f4").tobytes())
    (OUT / "aug_channel_stored.bin").write_bytes(stored.astype("<f4").tobytes())
    (OUT / "aug_channel_expected.bin").write_bytes(out.astype("<f4").tobytes())

    tokens = rng.normal(size=(6, 4)).astype(np.float32)
    stored_tok = rng.normal(size=(3, 4)).astype(np.float32)
    matches = (TokenMatch(1, 4, -0.5), TokenMatch(5, 0, -0.2), TokenMatch(2, 2, 0.1))
    tsel = TokenSelection(alpha=0.5, token_count=6, matches=matches, stored=stored_tok)
    tout = apply_token_augmentation(tokens, tsel)
    (OUT / "aug_token_input.bin").write_bytes(tokens.astype("<f4").tobytes())
    (OUT / "aug_token_stored.bin").write_bytes(stored_tok.astype("<f4").tobytes())
    (OUT / "aug_token_expected.bin").write_bytes(tout.astype("<f4").tobytes())
    (OUT / "aug_cases.json").write_text(json.dumps({
        "channel": {"shape": [4, 6, 6], "gamma": 0.5, "indices": [0, 2]},
        "token": {
            "shape": [6, 4], "alpha": 0.5,
            "matches": [{"original": m.original, "matched": m.matched,
                         "similarity": m.similarity} for m in matches],
        },
    }, indent=1))


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    fidelity_corpus()
    cache_fixtures()
    aug_cases()
    print(f"binding fixtures written to {OUT}")


if __name__ == "__main__":
    main()
