/** Low-level byte coding shared by the codec: CRC32, LEB128 varints,
 *  zero-run integer packing, and PackBits byte run-length coding. All
 *  integer values stay below 2^53 so plain doubles are exact. */

import { DecodeError } from "./errors.js";

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(buf: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < buf.length; i++) {
    c = CRC_TABLE[(c ^ buf[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

export class ByteWriter {
  private parts: Uint8Array[] = [];
  length = 0;

  push(bytes: Uint8Array): void {
    this.parts.push(bytes);
    this.length += bytes.length;
  }

  pushByte(value: number): void {
    this.push(Uint8Array.of(value));
  }

  concat(): Uint8Array {
    const out = new Uint8Array(this.length);
    let pos = 0;
    for (const part of this.parts) {
      out.set(part, pos);
      pos += part.length;
    }
    return out;
  }
}

export function varintEncodeValue(value: number, out: number[]): void {
  let v = value;
  for (;;) {
    const b = v % 128;
    v = Math.floor(v / 128);
    if (v > 0) out.push(b + 128);
    else {
      out.push(b);
      return;
    }
  }
}

export function varintEncode(values: ArrayLike<number>): Uint8Array {
  const out: number[] = [];
  for (let i = 0; i < values.length; i++) varintEncodeValue(values[i], out);
  return Uint8Array.from(out);
}

export function varintDecodeValue(buf: Uint8Array, pos: number): [number, number] {
  let value = 0;
  let scale = 1;
  let count = 0;
  for (;;) {
    if (pos >= buf.length) throw new DecodeError("truncated varint");
    const b = buf[pos];
    pos += 1;
    value += (b & 0x7f) * scale;
    if ((b & 0x80) === 0) return [value, pos];
    scale *= 128;
    if (++count > 9) throw new DecodeError("varint longer than 10 bytes");
  }
}

export function varintDecodeAll(buf: Uint8Array): number[] {
  const out: number[] = [];
  let pos = 0;
  while (pos < buf.length) {
    const [value, next] = varintDecodeValue(buf, pos);
    out.push(value);
    pos = next;
  }
  return out;
}

/** Zero run-length + varint coding. Symbol grammar: 0 = single zero,
 *  1 = zero run followed by varint(runlen - 2), s >= 2 = unzigzag(s - 1). */
export function packInts(values: Float64Array): Uint8Array {
  const syms: number[] = [];
  const n = values.length;
  let i = 0;
  while (i < n) {
    const v = values[i];
    if (v === 0) {
      let run = 1;
      while (i + run < n && values[i + run] === 0) run++;
      if (run === 1) syms.push(0);
      else {
        syms.push(1);
        syms.push(run - 2);
      }
      i += run;
    } else {
      const z = v >= 0 ? 2 * v : -2 * v - 1;
      syms.push(z + 1);
      i++;
    }
  }
  return varintEncode(syms);
}

export function unpackInts(buf: Uint8Array, expected: number): Float64Array {
  const out = new Float64Array(expected);
  let pos = 0;
  let filled = 0;
  while (pos < buf.length) {
    const [sym, next] = varintDecodeValue(buf, pos);
    pos = next;
    if (sym === 0) {
      filled += 1;
    } else if (sym === 1) {
      const [runMinus2, after] = varintDecodeValue(buf, pos);
      pos = after;
      filled += runMinus2 + 2;
    } else {
      const z = sym - 1;
      if (filled >= expected) throw new DecodeError("stream decodes past its length");
      out[filled] = z % 2 === 0 ? z / 2 : -(z + 1) / 2;
      filled += 1;
    }
    if (filled > expected) throw new DecodeError("stream decodes past its length");
  }
  if (filled !== expected) {
    throw new DecodeError(`stream decodes to ${filled} values, expected ${expected}`);
  }
  return out;
}

export function packbitsEncode(data: Uint8Array): Uint8Array {
  const n = data.length;
  const out: number[] = [];
  let litStart = -1;

  const flushLiteral = (ls: number, le: number) => {
    while (ls < le) {
      const c = Math.min(128, le - ls);
      out.push(c - 1);
      for (let i = ls; i < ls + c; i++) out.push(data[i]);
      ls += c;
    }
  };

  let i = 0;
  while (i < n) {
    let run = 1;
    while (i + run < n && data[i + run] === data[i]) run++;
    if (run >= 3) {
      if (litStart >= 0) {
        flushLiteral(litStart, i);
        litStart = -1;
      }
      let rem = run;
      while (rem > 0) {
        let c = rem >= 128 ? 128 : rem;
        if (rem - c === 1) c -= 1; // never leave a remainder of 1
        out.push(257 - c);
        out.push(data[i]);
        rem -= c;
      }
    } else if (litStart < 0) {
      litStart = i;
    }
    i += run;
  }
  if (litStart >= 0) flushLiteral(litStart, n);
  return Uint8Array.from(out);
}

export function packbitsDecode(data: Uint8Array, expected: number): Uint8Array {
  const out = new Uint8Array(expected);
  let pos = 0;
  let filled = 0;
  while (pos < data.length) {
    const ctrl = data[pos];
    pos += 1;
    if (ctrl < 128) {
      const count = ctrl + 1;
      if (pos + count > data.length) throw new DecodeError("truncated literal run");
      if (filled + count > expected) throw new DecodeError("packed stream expands past its raw size");
      out.set(data.subarray(pos, pos + count), filled);
      pos += count;
      filled += count;
    } else if (ctrl === 128) {
      throw new DecodeError("invalid control byte 0x80");
    } else {
      const count = 257 - ctrl;
      if (pos >= data.length) throw new DecodeError("truncated repeat run");
      if (filled + count > expected) throw new DecodeError("packed stream expands past its raw size");
      out.fill(data[pos], filled, filled + count);
      pos += 1;
      filled += count;
    }
  }
  if (filled !== expected) {
    throw new DecodeError(`packed stream expands to ${filled} bytes, expected ${expected}`);
  }
  return out;
}
