/** Run-length decoding of label masks served by the backend. */

import type { MaskRLE } from "./api.js";

export function decodeRLE(rle: MaskRLE): Int32Array {
  if (rle.runs.length % 2 !== 0) {
    throw new Error("runs must alternate (label, length)");
  }
  const total = rle.width * rle.height;
  const out = new Int32Array(total);
  let offset = 0;
  for (let i = 0; i < rle.runs.length; i += 2) {
    const label = rle.runs[i];
    const length = rle.runs[i + 1];
    if (offset + length > total) {
      throw new Error(`run lengths exceed ${total}`);
    }
    out.fill(label, offset, offset + length);
    offset += length;
  }
  if (offset !== total) {
    throw new Error(`run lengths sum to ${offset}, expected ${total}`);
  }
  return out;
}

export function labelsIn(mask: Int32Array): number[] {
  const seen = new Set<number>();
  for (const v of mask) {
    if (v !== 0) seen.add(v);
  }
  return [...seen].sort((a, b) => a - b);
}
