/** Error-bounded chunk codec, byte-compatible with the native writer.
 *
 *  The arithmetic mirrors the reference implementation operation for
 *  operation (IEEE f64 quantization, exact integer lifting transform,
 *  identical stream grammar), so encoding the same samples produces
 *  identical bytes on both sides.
 */

import {
  ByteWriter,
  crc32,
  packbitsDecode,
  packbitsEncode,
  packInts,
  unpackInts,
  varintDecodeValue,
  varintEncodeValue,
} from "./bytes.js";
import { DecodeError } from "./errors.js";

export const CHUNK_MAGIC = 0x31434641; // "AFC1" little-endian
export const TRANSFORM_NONE = 0;
export const TRANSFORM_BLOCK = 1;

const Q_MAX = Math.pow(2, 44);
const STEP_SCALE = 1.0 - Math.pow(2, -12);

export interface CodecParams {
  tolerance: number;
  transform: "none" | "block";
}

export interface DecodedChunk {
  params: CodecParams;
  shape: number[];
  count: number;
  rawBytes: number;
  encodedBytes: number;
  samples: Float32Array[];
}

export function quantizationStep(tolerance: number): number {
  return 2.0 * tolerance * STEP_SCALE;
}

function numel(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

function paddedDim(v: number): number {
  return Math.ceil(v / 4) * 4;
}

function coeffCount(shape: number[], useBlock: boolean): number {
  const total = numel(shape);
  if (!useBlock) return total;
  const h = shape[shape.length - 2];
  const w = shape[shape.length - 1];
  return (total / (h * w)) * paddedDim(h) * paddedDim(w);
}

function lift4Forward(v: Float64Array, o0: number, stride: number): void {
  const x0 = v[o0];
  const x1 = v[o0 + stride];
  const x2 = v[o0 + 2 * stride];
  const x3 = v[o0 + 3 * stride];
  const l0 = Math.floor((x0 + x1) / 2);
  const h0 = x0 - x1;
  const l1 = Math.floor((x2 + x3) / 2);
  const h1 = x2 - x3;
  v[o0] = Math.floor((l0 + l1) / 2);
  v[o0 + stride] = l0 - l1;
  v[o0 + 2 * stride] = h0;
  v[o0 + 3 * stride] = h1;
}

function lift4Inverse(v: Float64Array, o0: number, stride: number): void {
  const ll = v[o0];
  const hl = v[o0 + stride];
  const h0 = v[o0 + 2 * stride];
  const h1 = v[o0 + 3 * stride];
  const l0 = ll + Math.floor((hl + 1) / 2);
  const l1 = l0 - hl;
  const x0 = l0 + Math.floor((h0 + 1) / 2);
  const x2 = l1 + Math.floor((h1 + 1) / 2);
  v[o0] = x0;
  v[o0 + stride] = x0 - h0;
  v[o0 + 2 * stride] = x2;
  v[o0 + 3 * stride] = x2 - h1;
}

function forwardBlockTransform(q: Float64Array, shape: number[]): Float64Array {
  const h = shape[shape.length - 2];
  const w = shape[shape.length - 1];
  const lead = q.length / (h * w);
  const hp = paddedDim(h);
  const wp = paddedDim(w);
  const out = new Float64Array(lead * hp * wp);
  for (let m = 0; m < lead; m++) {
    for (let y = 0; y < hp; y++) {
      const sy = Math.min(y, h - 1);
      const src = (m * h + sy) * w;
      const dst = (m * hp + y) * wp;
      for (let x = 0; x < wp; x++) {
        out[dst + x] = q[src + Math.min(x, w - 1)];
      }
    }
  }
  for (let m = 0; m < lead; m++) {
    const base = m * hp * wp;
    for (let y = 0; y < hp; y++) {
      for (let bx = 0; bx < wp; bx += 4) {
        lift4Forward(out, base + y * wp + bx, 1);
      }
    }
    for (let by = 0; by < hp; by += 4) {
      for (let x = 0; x < wp; x++) {
        lift4Forward(out, base + by * wp + x, wp);
      }
    }
  }
  return out;
}

function inverseBlockTransform(coeffs: Float64Array, shape: number[]): Float64Array {
  const h = shape[shape.length - 2];
  const w = shape[shape.length - 1];
  const total = numel(shape);
  const lead = total / (h * w);
  const hp = paddedDim(h);
  const wp = paddedDim(w);
  const work = Float64Array.from(coeffs);
  for (let m = 0; m < lead; m++) {
    const base = m * hp * wp;
    for (let by = 0; by < hp; by += 4) {
      for (let x = 0; x < wp; x++) {
        lift4Inverse(work, base + by * wp + x, wp);
      }
    }
    for (let y = 0; y < hp; y++) {
      for (let bx = 0; bx < wp; bx += 4) {
        lift4Inverse(work, base + y * wp + bx, 1);
      }
    }
  }
  const out = new Float64Array(total);
  for (let m = 0; m < lead; m++) {
    for (let y = 0; y < h; y++) {
      const src = (m * hp + y) * wp;
      const dst = (m * h + y) * w;
      for (let x = 0; x < w; x++) out[dst + x] = work[src + x];
    }
  }
  return out;
}

function encodeLossy(
  stacked: Float32Array,
  count: number,
  shape: number[],
  tolerance: number,
  useBlock: boolean,
): Uint8Array {
  const step = quantizationStep(tolerance);
  const total = stacked.length;
  const perSample = numel(shape);
  const q = new Float64Array(total);
  const outlierIdx: number[] = [];
  for (let i = 0; i < total; i++) {
    const x = stacked[i];
    let qi = Math.floor(x / step + 0.5);
    let outlier = false;
    if (Math.abs(qi) > Q_MAX) {
      qi = 0;
      outlier = true;
    }
    const recon = Math.fround(qi * step);
    if (Math.abs(x - recon) > tolerance) outlier = true;
    if (outlier) {
      qi = 0;
      outlierIdx.push(i);
    }
    q[i] = qi;
  }

  const writer = new ByteWriter();
  let prev: Float64Array | null = null;
  for (let s = 0; s < count; s++) {
    const sampleQ = q.subarray(s * perSample, (s + 1) * perSample);
    const coeffs = useBlock
      ? forwardBlockTransform(sampleQ, shape)
      : Float64Array.from(sampleQ);
    const rawPacked = packInts(coeffs);
    let mode = 0;
    let chosen = rawPacked;
    if (prev !== null) {
      const delta = new Float64Array(coeffs.length);
      for (let i = 0; i < coeffs.length; i++) delta[i] = coeffs[i] - prev[i];
      const deltaPacked = packInts(delta);
      if (deltaPacked.length < rawPacked.length) {
        mode = 1;
        chosen = deltaPacked;
      }
    }
    const head: number[] = [mode];
    varintEncodeValue(chosen.length, head);
    writer.push(Uint8Array.from(head));
    writer.push(chosen);
    prev = coeffs;
  }

  const tail: number[] = [];
  varintEncodeValue(outlierIdx.length, tail);
  if (outlierIdx.length) {
    let previous = 0;
    for (let i = 0; i < outlierIdx.length; i++) {
      varintEncodeValue(i === 0 ? outlierIdx[0] : outlierIdx[i] - previous, tail);
      previous = outlierIdx[i];
    }
  }
  writer.push(Uint8Array.from(tail));
  if (outlierIdx.length) {
    const values = new Uint8Array(4 * outlierIdx.length);
    const view = new DataView(values.buffer);
    for (let i = 0; i < outlierIdx.length; i++) {
      view.setFloat32(4 * i, stacked[outlierIdx[i]], true);
    }
    writer.push(values);
  }
  return writer.concat();
}

/** Compress `count` same-shape float32 samples into one chunk, byte-identical
 *  to the native encoder. `samples` holds the concatenated sample data. */
export function encode(
  samples: Float32Array,
  shape: number[],
  count: number,
  params: CodecParams,
): Uint8Array {
  if (count < 1) throw new RangeError("a chunk needs at least one sample");
  const perSample = numel(shape);
  if (samples.length !== count * perSample) {
    throw new RangeError(
      `sample data holds ${samples.length} values, expected ${count * perSample}`,
    );
  }
  for (let i = 0; i < samples.length; i++) {
    if (!Number.isFinite(samples[i])) throw new RangeError("samples contain NaN or Inf");
  }
  const tolerance = params.tolerance;
  if (!(tolerance >= 0) || !Number.isFinite(tolerance)) {
    throw new RangeError(`tolerance must be finite and >= 0, got ${tolerance}`);
  }
  const useBlock = params.transform === "block" && shape.length >= 2 && tolerance > 0;
  let payload: Uint8Array;
  if (tolerance === 0) {
    const raw = new Uint8Array(samples.length * 4);
    const view = new DataView(raw.buffer);
    for (let i = 0; i < samples.length; i++) view.setFloat32(4 * i, samples[i], true);
    payload = packbitsEncode(raw);
  } else {
    payload = encodeLossy(samples, count, shape, tolerance, useBlock);
  }

  const rank = shape.length;
  const headLen = 21 + 4 * rank + 16;
  const out = new Uint8Array(headLen + payload.length + 4);
  const view = new DataView(out.buffer);
  view.setUint32(0, CHUNK_MAGIC, true);
  out[4] = useBlock ? TRANSFORM_BLOCK : TRANSFORM_NONE;
  view.setFloat64(5, tolerance, true);
  view.setUint32(13, count, true);
  view.setUint32(17, rank, true);
  for (let i = 0; i < rank; i++) view.setUint32(21 + 4 * i, shape[i], true);
  const sizesAt = 21 + 4 * rank;
  view.setBigUint64(sizesAt, BigInt(count * perSample * 4), true);
  view.setBigUint64(sizesAt + 8, BigInt(payload.length), true);
  out.set(payload, headLen);
  view.setUint32(headLen + payload.length, crc32(payload), true);
  return out;
}

/** Parse and decode one chunk; validates framing and the payload CRC. */
export function decode(data: Uint8Array): DecodedChunk {
  if (data.length < 21) throw new DecodeError("chunk shorter than fixed header");
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  if (view.getUint32(0, true) !== CHUNK_MAGIC) throw new DecodeError("bad chunk magic");
  const transformId = data[4];
  if (transformId !== TRANSFORM_NONE && transformId !== TRANSFORM_BLOCK) {
    throw new DecodeError(`unknown transform id ${transformId}`);
  }
  const tolerance = view.getFloat64(5, true);
  if (!Number.isFinite(tolerance) || tolerance < 0) {
    throw new DecodeError(`invalid tolerance ${tolerance}`);
  }
  const count = view.getUint32(13, true);
  const rank = view.getUint32(17, true);
  if (count < 1) throw new DecodeError("sample count must be >= 1");
  if (rank < 1 || rank > 16) throw new DecodeError(`unsupported rank ${rank}`);
  if (data.length < 21 + 4 * rank + 16) throw new DecodeError("chunk truncated in dimension list");
  const shape: number[] = [];
  for (let i = 0; i < rank; i++) shape.push(view.getUint32(21 + 4 * i, true));
  if (shape.some((d) => d < 1)) throw new DecodeError(`invalid dimensions ${shape}`);
  const sizesAt = 21 + 4 * rank;
  const rawBytes = Number(view.getBigUint64(sizesAt, true));
  const payloadLen = Number(view.getBigUint64(sizesAt + 8, true));
  const perSample = numel(shape);
  if (rawBytes !== count * perSample * 4) {
    throw new DecodeError("raw size disagrees with shape and count");
  }
  const headLen = sizesAt + 16;
  if (data.length !== headLen + payloadLen + 4) {
    throw new DecodeError("chunk length disagrees with payload size");
  }
  const payload = data.subarray(headLen, headLen + payloadLen);
  const storedCrc = view.getUint32(headLen + payloadLen, true);
  if (crc32(payload) !== storedCrc) throw new DecodeError("payload checksum mismatch");

  const params: CodecParams = {
    tolerance,
    transform: transformId === TRANSFORM_BLOCK ? "block" : "none",
  };
  const out: DecodedChunk = {
    params,
    shape,
    count,
    rawBytes,
    encodedBytes: data.length,
    samples: [],
  };

  if (tolerance === 0) {
    const raw = packbitsDecode(payload, rawBytes);
    const rawView = new DataView(raw.buffer);
    for (let s = 0; s < count; s++) {
      const sample = new Float32Array(perSample);
      for (let i = 0; i < perSample; i++) {
        sample[i] = rawView.getFloat32(4 * (s * perSample + i), true);
      }
      out.samples.push(sample);
    }
    return out;
  }

  const useBlock = transformId === TRANSFORM_BLOCK;
  if (useBlock && rank < 2) throw new DecodeError("block transform recorded for a rank-1 chunk");
  const expectedCoeffs = coeffCount(shape, useBlock);
  const step = quantizationStep(tolerance);
  const flat = new Float32Array(count * perSample);
  let pos = 0;
  let prev: Float64Array | null = null;
  for (let s = 0; s < count; s++) {
    if (pos >= payload.length) throw new DecodeError("payload truncated before sample stream");
    const mode = payload[pos];
    pos += 1;
    if ((mode !== 0 && mode !== 1) || (mode === 1 && prev === null)) {
      throw new DecodeError(`invalid sample stream mode ${mode}`);
    }
    const [streamLen, afterLen] = varintDecodeValue(payload, pos);
    pos = afterLen;
    if (pos + streamLen > payload.length) throw new DecodeError("sample stream overruns payload");
    let coeffs = unpackInts(payload.subarray(pos, pos + streamLen), expectedCoeffs);
    pos += streamLen;
    if (mode === 1 && prev !== null) {
      for (let i = 0; i < coeffs.length; i++) coeffs[i] += prev[i];
    }
    prev = coeffs;
    const q = useBlock ? inverseBlockTransform(coeffs, shape) : coeffs;
    const base = s * perSample;
    for (let i = 0; i < perSample; i++) flat[base + i] = Math.fround(q[i] * step);
  }
  const [outlierCount, afterCount] = varintDecodeValue(payload, pos);
  pos = afterCount;
  if (outlierCount > 0) {
    let index = 0;
    const indices = new Array<number>(outlierCount);
    for (let i = 0; i < outlierCount; i++) {
      const [gap, next] = varintDecodeValue(payload, pos);
      pos = next;
      index = i === 0 ? gap : index + gap;
      if (i > 0 && gap < 1) throw new DecodeError("outlier indices out of range");
      indices[i] = index;
    }
    if (indices[outlierCount - 1] >= count * perSample) {
      throw new DecodeError("outlier indices out of range");
    }
    if (pos + 4 * outlierCount > payload.length) {
      throw new DecodeError("truncated outlier value block");
    }
    const valueView = new DataView(payload.buffer, payload.byteOffset + pos, 4 * outlierCount);
    for (let i = 0; i < outlierCount; i++) {
      flat[indices[i]] = valueView.getFloat32(4 * i, true);
    }
    pos += 4 * outlierCount;
  }
  if (pos !== payload.length) throw new DecodeError("trailing bytes after chunk payload");
  for (let s = 0; s < count; s++) {
    out.samples.push(flat.slice(s * perSample, (s + 1) * perSample));
  }
  return out;
}

export function compressionRatio(chunk: DecodedChunk): number {
  return chunk.encodedBytes / chunk.rawBytes;
}
