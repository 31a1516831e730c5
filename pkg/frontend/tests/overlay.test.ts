import { describe, expect, it } from "vitest";

import { instanceColor } from "../src/colors.js";
import { renderOverlayRGBA } from "../src/overlay.js";

describe("overlay rasterization", () => {
  it("upsamples nearest-neighbour and keeps background transparent", () => {
    const labels = new Int32Array([0, 1, 2, 0]); // 2x2
    const rgba = renderOverlayRGBA(labels, 2, 2, { scale: 2, opacity: 1 });
    expect(rgba.length).toBe(4 * 4 * 4);
    const px = (x: number, y: number) => {
      const o = (y * 4 + x) * 4;
      return [rgba[o], rgba[o + 1], rgba[o + 2], rgba[o + 3]];
    };
    expect(px(0, 0)[3]).toBe(0); // background cell stays transparent
    const c1 = instanceColor(1);
    for (const [x, y] of [
      [2, 0],
      [3, 0],
      [2, 1],
      [3, 1],
    ]) {
      expect(px(x, y)).toEqual([c1[0], c1[1], c1[2], 255]); // 2x2 block of label 1
    }
    const c2 = instanceColor(2);
    expect(px(0, 2)).toEqual([c2[0], c2[1], c2[2], 255]);
  });

  it("applies opacity to labeled cells only", () => {
    const labels = new Int32Array([1]);
    const rgba = renderOverlayRGBA(labels, 1, 1, { scale: 1, opacity: 0.5 });
    expect(rgba[3]).toBe(128);
  });

  it("rejects non-integer scales", () => {
    expect(() => renderOverlayRGBA(new Int32Array([0]), 1, 1, { scale: 1.5, opacity: 1 })).toThrow();
  });
});

describe("instance colors", () => {
  it("are stable and distinct per id", () => {
    const seen = new Set<string>();
    for (let id = 1; id <= 24; id++) {
      const a = instanceColor(id).join(",");
      const b = instanceColor(id).join(",");
      expect(a).toBe(b);
      seen.add(a);
    }
    expect(seen.size).toBe(24);
  });

  it("background is black/transparent-by-convention", () => {
    expect(instanceColor(0)).toEqual([0, 0, 0]);
  });
});
