/** Reader for compressed activation cache files ("AFCACHE1").
 *
 *  Parses the header, label block, checksummed chunk index, and
 *  augmentation metadata; decodes chunks on demand; iterates epochs in
 *  the same seeded order as the native reader. Sample data is copied out
 *  of internal buffers on every read.
 */

import * as fs from "node:fs";

import { applyChannelAug, applyTokenAug, ChannelSelection, TokenSelection } from "./aug.js";
import { crc32 } from "./bytes.js";
import { decode } from "./codec.js";
import { ClosedHandleError, CorruptionError, FormatError } from "./errors.js";
import { mix64, shuffled, SplitMix64, streamSeed } from "./rng.js";

const HEADER_BYTES = 128;
const INDEX_ENTRY_BYTES = 40;
const MAX_RANK = 8;
const MAGIC = "AFCACHE1";
const MATCH_RECORD_BYTES = 16;

export type AugKind = "none" | "channel" | "token";

export interface CacheHeader {
  version: number;
  sampleShape: number[];
  sampleCount: number;
  chunkSize: number;
  tolerance: number;
  transform: "none" | "block";
  augKind: AugKind;
  labelWidth: number;
  seed: bigint;
  chunkCount: number;
}

export interface IndexEntry {
  ordinal: number;
  offset: number;
  length: number;
  crc32: number;
  firstSample: number;
  endSample: number;
}

export interface CachedSample {
  features: Float32Array;
  shape: number[];
  label: number;
  aug: ChannelSelection | TokenSelection | null;
}

function roundHalfAway(value: number): number {
  return value >= 0 ? Math.floor(value + 0.5) : -Math.floor(-value + 0.5);
}

function readEntry(view: DataView, at: number): IndexEntry {
  return {
    ordinal: view.getUint32(at, true),
    offset: Number(view.getBigUint64(at + 4, true)),
    length: Number(view.getBigUint64(at + 12, true)),
    crc32: view.getUint32(at + 20, true),
    firstSample: Number(view.getBigUint64(at + 24, true)),
    endSample: Number(view.getBigUint64(at + 32, true)),
  };
}

export class CacheHandle {
  readonly path: string;
  header!: CacheHeader;
  labels!: number[];
  index!: IndexEntry[];
  augIndex: IndexEntry[] = [];
  channelGamma = 0;
  channelIndices: number[] = [];
  tokenAlpha = 0;
  payloadPerSample = 0;
  private fd: number | null;
  private fileSize = 0;

  constructor(path: string, verify = false) {
    this.path = path;
    if (!fs.existsSync(path)) {
      throw new Error(`missing file: ${path}`);
    }
    this.fd = fs.openSync(path, "r");
    try {
      this.fileSize = fs.fstatSync(this.fd).size;
      this.parse();
      if (verify) this.verify();
    } catch (err) {
      fs.closeSync(this.fd);
      this.fd = null;
      throw err;
    }
  }

  close(): void {
    if (this.fd !== null) {
      fs.closeSync(this.fd);
      this.fd = null;
    }
  }

  private pread(offset: number, length: number): Uint8Array {
    if (this.fd === null) throw new ClosedHandleError();
    const buf = Buffer.alloc(length);
    const got = fs.readSync(this.fd, buf, 0, length, offset);
    if (got !== length) throw new CorruptionError(`short read at offset ${offset}`);
    return new Uint8Array(buf.buffer, buf.byteOffset, length);
  }

  private parse(): void {
    if (this.fileSize < HEADER_BYTES + 4) throw new FormatError("file too small to be a cache");
    const head = this.pread(0, HEADER_BYTES);
    const view = new DataView(head.buffer, head.byteOffset, head.byteLength);
    const magic = Buffer.from(head.subarray(0, 8)).toString("latin1");
    if (magic !== MAGIC) throw new FormatError(`bad magic ${JSON.stringify(magic)}`);
    const version = view.getUint32(8, true);
    if (version !== 1) throw new FormatError(`unsupported version ${version}`);
    const n = Number(view.getBigUint64(12, true));
    const k = view.getUint32(20, true);
    const rank = view.getUint32(24, true);
    if (rank < 1 || rank > MAX_RANK) throw new FormatError(`invalid rank ${rank}`);
    const shape: number[] = [];
    for (let i = 0; i < rank; i++) shape.push(view.getUint32(28 + 4 * i, true));
    if (shape.some((d) => d < 1)) throw new FormatError("invalid dimension list");
    const tolerance = view.getFloat64(60, true);
    const transformId = head[68];
    const augId = head[69];
    const labelWidth = head[70];
    const seed = view.getBigUint64(71, true);
    if (n < 1 || k < 1) throw new FormatError("sample count and chunk size must be >= 1");
    if (augId > 2) throw new FormatError(`unknown augmentation kind ${augId}`);
    if (![1, 2, 4, 8].includes(labelWidth)) {
      throw new FormatError(`unsupported label width ${labelWidth}`);
    }
    const chunkCount = Math.ceil(n / k);
    this.header = {
      version,
      sampleShape: shape,
      sampleCount: n,
      chunkSize: k,
      tolerance,
      transform: transformId === 1 ? "block" : "none",
      augKind: augId === 1 ? "channel" : augId === 2 ? "token" : "none",
      labelWidth,
      seed,
      chunkCount,
    };

    let pos = HEADER_BYTES;
    const labelRaw = this.pread(pos, n * labelWidth);
    const labelView = new DataView(labelRaw.buffer, labelRaw.byteOffset, labelRaw.byteLength);
    this.labels = [];
    for (let i = 0; i < n; i++) {
      const at = i * labelWidth;
      if (labelWidth === 1) this.labels.push(labelView.getUint8(at));
      else if (labelWidth === 2) this.labels.push(labelView.getUint16(at, true));
      else if (labelWidth === 4) this.labels.push(labelView.getUint32(at, true));
      else this.labels.push(Number(labelView.getBigUint64(at, true)));
    }
    pos += n * labelWidth;

    const indexRaw = this.pread(pos, chunkCount * INDEX_ENTRY_BYTES);
    const indexView = new DataView(indexRaw.buffer, indexRaw.byteOffset, indexRaw.byteLength);
    this.index = [];
    let expectFirst = 0;
    for (let i = 0; i < chunkCount; i++) {
      const entry = readEntry(indexView, i * INDEX_ENTRY_BYTES);
      if (entry.ordinal !== i) throw new FormatError(`index entry ${i} has ordinal ${entry.ordinal}`);
      if (entry.firstSample !== expectFirst || entry.endSample <= entry.firstSample) {
        throw new FormatError(`chunk ${i} sample range is not a partition`);
      }
      expectFirst = entry.endSample;
      this.index.push(entry);
    }
    if (expectFirst !== n) throw new FormatError("chunk sample ranges do not cover the dataset");
    pos += chunkCount * INDEX_ENTRY_BYTES;

    if (this.header.augKind === "channel") {
      const meta = this.pread(pos, 16);
      const metaView = new DataView(meta.buffer, meta.byteOffset, meta.byteLength);
      this.channelGamma = metaView.getFloat64(0, true);
      const c = metaView.getUint32(8, true);
      const x = metaView.getUint32(12, true);
      pos += 16;
      if (c !== shape[0]) throw new FormatError("channel count disagrees with sample shape");
      const idxRaw = this.pread(pos, 4 * x);
      const idxView = new DataView(idxRaw.buffer, idxRaw.byteOffset, idxRaw.byteLength);
      this.channelIndices = [];
      for (let i = 0; i < x; i++) this.channelIndices.push(idxView.getUint32(4 * i, true));
      pos += 4 * x;
      this.payloadPerSample = x;
    } else if (this.header.augKind === "token") {
      const meta = this.pread(pos, 12);
      const metaView = new DataView(meta.buffer, meta.byteOffset, meta.byteLength);
      this.tokenAlpha = metaView.getFloat64(0, true);
      const nToken = metaView.getUint32(8, true);
      pos += 12;
      if (nToken !== shape[0]) throw new FormatError("token count disagrees with sample shape");
      this.payloadPerSample = roundHalfAway(this.tokenAlpha * nToken);
    }
    if (this.header.augKind !== "none" && this.payloadPerSample > 0) {
      const augRaw = this.pread(pos, chunkCount * INDEX_ENTRY_BYTES);
      const augView = new DataView(augRaw.buffer, augRaw.byteOffset, augRaw.byteLength);
      for (let i = 0; i < chunkCount; i++) {
        this.augIndex.push(readEntry(augView, i * INDEX_ENTRY_BYTES));
      }
      pos += chunkCount * INDEX_ENTRY_BYTES;
    }
  }

  /** Check the trailing file CRC and every chunk checksum. */
  verify(): void {
    const body = this.pread(0, this.fileSize - 4);
    const tail = this.pread(this.fileSize - 4, 4);
    const view = new DataView(tail.buffer, tail.byteOffset, 4);
    if (crc32(body) !== view.getUint32(0, true)) {
      throw new CorruptionError("file checksum mismatch");
    }
    for (const entry of [...this.index, ...this.augIndex]) {
      const span = this.pread(entry.offset, entry.length);
      if (crc32(span) !== entry.crc32) {
        throw new CorruptionError(`chunk ${entry.ordinal} checksum mismatch`);
      }
    }
  }

  readChunk(ordinal: number): CachedSample[] {
    if (ordinal < 0 || ordinal >= this.index.length) {
      throw new RangeError(`chunk ordinal ${ordinal} out of range [0, ${this.index.length})`);
    }
    const entry = this.index[ordinal];
    const span = this.pread(entry.offset, entry.length);
    if (crc32(span) !== entry.crc32) {
      throw new CorruptionError(`chunk ${ordinal} checksum mismatch`);
    }
    const chunk = decode(span);
    const count = entry.endSample - entry.firstSample;
    if (chunk.count !== count) {
      throw new CorruptionError(`chunk ${ordinal} metadata disagrees with the index`);
    }
    const augs: (ChannelSelection | TokenSelection | null)[] = new Array(count).fill(null);
    if (this.header.augKind === "channel") {
      if (this.payloadPerSample === 0) {
        for (let i = 0; i < count; i++) {
          augs[i] = {
            gamma: this.channelGamma,
            channelCount: this.header.sampleShape[0],
            indices: [],
            stored: null,
          };
        }
      } else {
        const stored = decode(this.readAugSpan(ordinal));
        for (let i = 0; i < count; i++) {
          augs[i] = {
            gamma: this.channelGamma,
            channelCount: this.header.sampleShape[0],
            indices: [...this.channelIndices],
            stored: stored.samples[i],
          };
        }
      }
    } else if (this.header.augKind === "token") {
      const m = this.payloadPerSample;
      if (m === 0) {
        for (let i = 0; i < count; i++) {
          augs[i] = {
            alpha: this.tokenAlpha,
            tokenCount: this.header.sampleShape[0],
            matches: [],
            stored: null,
          };
        }
      } else {
        const span2 = this.readAugSpan(ordinal);
        const recordsLen = count * m * MATCH_RECORD_BYTES;
        if (span2.length < recordsLen) {
          throw new CorruptionError(`augmentation chunk ${ordinal} too short`);
        }
        const recView = new DataView(span2.buffer, span2.byteOffset, recordsLen);
        const stored = decode(span2.subarray(recordsLen));
        for (let s = 0; s < count; s++) {
          const matches = [];
          for (let c = 0; c < m; c++) {
            const at = (s * m + c) * MATCH_RECORD_BYTES;
            matches.push({
              original: recView.getUint32(at, true),
              matched: recView.getUint32(at + 4, true),
              similarity: recView.getFloat64(at + 8, true),
            });
          }
          augs[s] = {
            alpha: this.tokenAlpha,
            tokenCount: this.header.sampleShape[0],
            matches,
            stored: stored.samples[s],
          };
        }
      }
    }
    const samples: CachedSample[] = [];
    for (let i = 0; i < count; i++) {
      samples.push({
        features: chunk.samples[i],
        shape: [...this.header.sampleShape],
        label: this.labels[entry.firstSample + i],
        aug: augs[i],
      });
    }
    return samples;
  }

  private readAugSpan(ordinal: number): Uint8Array {
    const entry = this.augIndex[ordinal];
    const span = this.pread(entry.offset, entry.length);
    if (crc32(span) !== entry.crc32) {
      throw new CorruptionError(`augmentation chunk ${ordinal} checksum mismatch`);
    }
    return span;
  }

  /** One epoch in the native seeded order: shuffled chunks, shuffled samples
   *  inside each chunk, chunk samples contiguous. */
  *iterate(seed: number | bigint): Generator<CachedSample> {
    const s = BigInt(seed);
    const order = shuffled(this.header.chunkCount, new SplitMix64(s));
    for (const ordinal of order) {
      const samples = this.readChunk(ordinal);
      const within = shuffled(samples.length, new SplitMix64(streamSeed(s, ordinal)));
      for (const i of within) yield samples[i];
    }
  }
}

export function openCache(path: string, verify = false): CacheHandle {
  return new CacheHandle(path, verify);
}

export { applyChannelAug, applyTokenAug, mix64 };
