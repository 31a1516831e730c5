/** End-to-end annotator loop against a live backend service. */

import { spawn, type ChildProcess } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { Client } from "../src/api.js";
import { instanceColor } from "../src/colors.js";
import { renderOverlayRGBA } from "../src/overlay.js";
import { decodeRLE, labelsIn } from "../src/rle.js";

const PORT = 8912 + (process.pid % 500);
const BASE = `http://127.0.0.1:${PORT}`;
let service: ChildProcess | null = null;

async function waitForService(timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${BASE}/sessions`);
      if (resp.ok) return;
    } catch {
      /* not up yet */
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("service did not come up");
}

beforeAll(async () => {
  const code =
    "import tempfile, uvicorn; from clickseg.service import create_app; " +
    `uvicorn.run(create_app(tempfile.mkdtemp()), host='127.0.0.1', port=${PORT}, log_level='warning')`;
  service = spawn("python3", ["-c", code], { stdio: "ignore" });
  await waitForService();
}, 40_000);

afterAll(() => {
  service?.kill();
});

describe("annotator loop against the live service", () => {
  it("click, run, overlay within a second; later click makes a new colored masklet", async () => {
    const client = new Client(BASE);
    // two static, well-separated objects on a 64x64 canvas
    const { id } = await client.createSession({
      kind: "synthetic",
      config: {
        width: 64,
        height: 64,
        keyframes: 5,
        intermediates: 0,
        seed: 3,
        objects: [
          { shape: "rect", color: [225, 65, 105], size: [20, 20], start: [16, 16] },
          { shape: "rect", color: [65, 225, 65], size: [20, 20], start: [46, 46], depth: 1 },
        ],
      },
    });
    const manifest = await client.getSession(id);
    expect(manifest.frames).toBe(5);
    expect(manifest.width).toBe(64);

    // first click on the first object, then the timed run -> overlay loop
    const first = await client.addClick(id, 0, 16, 16);
    expect(first.instance_id).toBe(1);
    const t0 = Date.now();
    await client.run(id);
    const rle0 = await client.getMask(id, 0);
    const labels0 = decodeRLE(rle0);
    const overlay = renderOverlayRGBA(labels0, rle0.width, rle0.height, {
      scale: 4 * 2,
      opacity: 0.55,
    });
    const elapsed = Date.now() - t0;
    expect(overlay.length).toBe(rle0.width * 8 * rle0.height * 8 * 4);
    expect(labelsIn(labels0)).toEqual([1]);
    expect(elapsed).toBeLessThan(1000);

    // a later-frame click creates a fresh masklet with a distinct color
    const second = await client.addClick(id, 2, 46, 46);
    expect(second.instance_id).toBe(2);
    await client.run(id);
    const early = decodeRLE(await client.getMask(id, 0));
    const late = decodeRLE(await client.getMask(id, 3));
    expect(labelsIn(early)).toEqual([1]);
    expect(labelsIn(late)).toEqual([1, 2]);
    expect(instanceColor(2)).not.toEqual(instanceColor(1));

    // metrics panel data is served for GT-backed sessions
    const metrics = await client.getMetrics(id);
    expect(metrics.miou).toBeGreaterThan(0.5);
  }, 30_000);
});
