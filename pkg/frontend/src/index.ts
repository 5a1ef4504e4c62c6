export {
  applyChannelAug,
  applyTokenAug,
  type ChannelSelection,
  type TokenMatchRecord,
  type TokenSelection,
} from "./aug.js";
export {
  CacheHandle,
  openCache,
  type AugKind,
  type CachedSample,
  type CacheHeader,
  type IndexEntry,
} from "./cache.js";
export {
  compressionRatio,
  decode,
  encode,
  quantizationStep,
  type CodecParams,
  type DecodedChunk,
} from "./codec.js";
export { ClosedHandleError, CorruptionError, DecodeError, FormatError } from "./errors.js";
export { mix64, shuffled, SplitMix64, streamSeed } from "./rng.js";
