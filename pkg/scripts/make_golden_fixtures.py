#!/usr/bin/env python3
"""Generate the frozen test fixtures under tests/data/.

Run once from the repo root; outputs are committed so the tests never
depend on RNG behavior:
  - golden_tensor.bin          source tensor for the codec format freeze
  - golden_chunk_tau0.bin      its lossless encoding
  - golden_chunk_tau1e-2.bin   its lossy encoding at tau = 1e-2
  - shuffle_golden.json        epoch orders from an independent reference
                               implementation of the documented RNG
"""
import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from actcache.codec import CodecParams, encode  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "tests" / "data"

# --- reference RNG, written from the docs/FORMAT.md definition only -------

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def ref_mix64(z):
    z &= MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


class RefRng:
    def __init__(self, seed):
        self.s = seed & MASK

    def next(self):
        self.s = (self.s + GOLDEN) & MASK
        return ref_mix64(self.s)


def ref_shuffle(n, rng):
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.next() % (i + 1)
        order[i], order[j] = order[j], order[i]
    return order


def ref_epoch_order(seed, n, k):
    chunks = [(first, min(n, first + k)) for first in range(0, n, k)]
    chunk_order = ref_shuffle(len(chunks), RefRng(seed))
    stream = []
    for c in chunk_order:
        first, end = chunks[c]
        sub = RefRng(ref_mix64((seed ^ ((c + 1) * GOLDEN)) & MASK))
        within = ref_shuffle(end - first, sub)
        stream.extend(first + i for i in within)
    return chunk_order, stream


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(123)
    tensor = rng.uniform(-1.0, 1.0, size=(4, 8, 8)).astype(np.float32)
    (DATA / "golden_tensor.bin").write_bytes(tensor.astype("<f4").tobytes())
    (DATA / "golden_chunk_tau0.bin").write_bytes(encode([tensor], CodecParams(0.0)).to_bytes())
    (DATA / "golden_chunk_tau1e-2.bin").write_bytes(
        encode([tensor], CodecParams(1e-2)).to_bytes()
    )

    cases = []
    for seed, n, k in [(7, 8, 2), (0, 8, 2), (3, 10, 4), (7, 12, 3)]:
        chunk_order, stream = ref_epoch_order(seed, n, k)
        cases.append({
            "seed": seed, "n": n, "k": k,
            "chunk_order": chunk_order, "sample_order": stream,
        })
    (DATA / "shuffle_golden.json").write_text(json.dumps({"cases": cases}, indent=1))
    print(f"fixtures written to {DATA}")


if __name__ == "__main__":
    main()
