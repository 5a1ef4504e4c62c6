/** Feature-map augmentation on host typed arrays: flip-and-replace for CNN
 *  channels, token substitution for transformer activations. */

export interface ChannelSelection {
  gamma: number;
  channelCount: number;
  /** strictly increasing channel ids */
  indices: number[];
  /** stored channel data, (indices.length, H, W) row-major, or null */
  stored: Float32Array | null;
}

export interface TokenMatchRecord {
  original: number;
  matched: number;
  similarity: number;
}

export interface TokenSelection {
  alpha: number;
  tokenCount: number;
  /** similarity ascending; stored rows align with this order */
  matches: TokenMatchRecord[];
  stored: Float32Array | null;
}

/** Flip the width axis of a (C, H, W) feature map and overwrite the selected
 *  channels with their stored values. */
export function applyChannelAug(
  features: Float32Array,
  shape: [number, number, number],
  selection: ChannelSelection,
): Float32Array {
  const [c, h, w] = shape;
  if (features.length !== c * h * w) {
    throw new RangeError(`features hold ${features.length} values, expected ${c * h * w}`);
  }
  const out = new Float32Array(features.length);
  for (let ch = 0; ch < c; ch++) {
    for (let y = 0; y < h; y++) {
      const row = (ch * h + y) * w;
      for (let x = 0; x < w; x++) out[row + x] = features[row + (w - 1 - x)];
    }
  }
  if (selection.indices.length) {
    if (selection.stored === null) {
      throw new Error("sample has no stored channel payload");
    }
    const plane = h * w;
    if (selection.stored.length !== selection.indices.length * plane) {
      throw new RangeError("stored channel payload does not match the selection");
    }
    selection.indices.forEach((channel, row) => {
      out.set(selection.stored!.subarray(row * plane, (row + 1) * plane), channel * plane);
    });
  }
  return out;
}

/** Replace each selected original token row with its stored augmented token. */
export function applyTokenAug(
  tokens: Float32Array,
  shape: [number, number],
  selection: TokenSelection,
): Float32Array {
  const [n, d] = shape;
  if (tokens.length !== n * d) {
    throw new RangeError(`tokens hold ${tokens.length} values, expected ${n * d}`);
  }
  const out = Float32Array.from(tokens);
  if (!selection.matches.length) return out;
  if (selection.stored === null) {
    throw new Error("sample has no stored token payload");
  }
  if (selection.stored.length !== selection.matches.length * d) {
    throw new RangeError("stored token payload does not match the selection");
  }
  selection.matches.forEach((match, row) => {
    if (match.original < 0 || match.original >= n) {
      throw new RangeError(`match index ${match.original} out of range`);
    }
    out.set(selection.stored!.subarray(row * d, (row + 1) * d), match.original * d);
  });
  return out;
}
