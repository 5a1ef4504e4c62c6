import * as fs from "node:fs";
import * as path from "node:path";
import { fileURLToPath } from "node:url";

export const FIXTURES = path.join(path.dirname(fileURLToPath(import.meta.url)), "fixtures");

export function fixturePath(name: string): string {
  return path.join(FIXTURES, name);
}

export function readBytes(name: string): Uint8Array {
  const buf = fs.readFileSync(fixturePath(name));
  return new Uint8Array(buf.buffer, buf.byteOffset, buf.byteLength);
}

export function readJson<T>(name: string): T {
  return JSON.parse(fs.readFileSync(fixturePath(name), "utf-8")) as T;
}

export function readFloats(name: string): Float32Array {
  const bytes = readBytes(name);
  const out = new Float32Array(bytes.length / 4);
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  for (let i = 0; i < out.length; i++) out[i] = view.getFloat32(4 * i, true);
  return out;
}

export function maxAbsDiff(a: Float32Array, b: Float32Array): number {
  let worst = 0;
  for (let i = 0; i < a.length; i++) worst = Math.max(worst, Math.abs(a[i] - b[i]));
  return worst;
}
