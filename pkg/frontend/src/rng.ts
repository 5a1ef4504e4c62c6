/** SplitMix64 + Fisher-Yates, bit-compatible with the native cache reader.
 *  The algorithm is part of the file format contract (docs/FORMAT.md in the
 *  main repository). */

const MASK = (1n << 64n) - 1n;
export const GOLDEN_GAMMA = 0x9e3779b97f4a7c15n;

export function mix64(value: bigint): bigint {
  let z = value & MASK;
  z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK;
  z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK;
  return z ^ (z >> 31n);
}

export class SplitMix64 {
  private state: bigint;

  constructor(seed: bigint) {
    this.state = seed & MASK;
  }

  nextU64(): bigint {
    this.state = (this.state + GOLDEN_GAMMA) & MASK;
    return mix64(this.state);
  }

  randrange(n: number): number {
    if (n <= 0) throw new RangeError("randrange needs n >= 1");
    return Number(this.nextU64() % BigInt(n));
  }
}

/** Fisher-Yates permutation of 0..count-1, highest index first. */
export function shuffled(count: number, rng: SplitMix64): number[] {
  const order = Array.from({ length: count }, (_, i) => i);
  for (let i = count - 1; i > 0; i--) {
    const j = rng.randrange(i + 1);
    const tmp = order[i];
    order[i] = order[j];
    order[j] = tmp;
  }
  return order;
}

/** Sub-seed for the shuffle inside one chunk of an epoch stream. */
export function streamSeed(seed: bigint, ordinal: number): bigint {
  return mix64((seed ^ ((BigInt(ordinal) + 1n) * GOLDEN_GAMMA)) & MASK);
}
