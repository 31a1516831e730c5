/** Mask overlay rasterization.
 *
 * Masks live at feature resolution (stride 4); overlays are upsampled with
 * nearest neighbour so annotators see the engine's true granularity as
 * crisp blocks.
 */

import { instanceColor } from "./colors.js";

export interface OverlayOptions {
  /** integer upsampling factor: stride * zoom */
  scale: number;
  /** 0..1 overlay alpha for labeled cells */
  opacity: number;
}

/** RGBA buffer of size (w*scale) x (h*scale); background stays transparent. */
export function renderOverlayRGBA(
  labels: Int32Array,
  width: number,
  height: number,
  options: OverlayOptions,
): Uint8ClampedArray {
  const { scale, opacity } = options;
  if (!Number.isInteger(scale) || scale < 1) {
    throw new Error(`scale must be a positive integer, got ${scale}`);
  }
  const alpha = Math.round(Math.max(0, Math.min(1, opacity)) * 255);
  const ow = width * scale;
  const oh = height * scale;
  const out = new Uint8ClampedArray(ow * oh * 4);
  for (let oy = 0; oy < oh; oy++) {
    const sy = Math.floor(oy / scale);
    for (let ox = 0; ox < ow; ox++) {
      const sx = Math.floor(ox / scale);
      const label = labels[sy * width + sx];
      if (label === 0) continue;
      const [r, g, b] = instanceColor(label);
      const o = (oy * ow + ox) * 4;
      out[o] = r;
      out[o + 1] = g;
      out[o + 2] = b;
      out[o + 3] = alpha;
    }
  }
  return out;
}
