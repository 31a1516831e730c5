import { afterEach, describe, expect, it, vi } from "vitest";

import { ApiError, Client } from "../src/api.js";

function mockFetch(status: number, payload: unknown) {
  return vi.fn(async () => ({
    ok: status >= 200 && status < 300,
    status,
    json: async () => payload,
  })) as unknown as typeof fetch;
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("api client", () => {
  it("posts clicks with the wire schema", async () => {
    const fetchMock = mockFetch(200, { instance_id: 3 });
    vi.stubGlobal("fetch", fetchMock);
    const client = new Client("");
    const out = await client.addClick("abc", 2, 10, 20);
    expect(out.instance_id).toBe(3);
    const [url, init] = (fetchMock as any).mock.calls[0];
    expect(url).toBe("/sessions/abc/clicks");
    expect(JSON.parse(init.body)).toEqual({ frame: 2, x: 10, y: 20 });
  });

  it("surfaces 422 payloads as ApiError", async () => {
    vi.stubGlobal(
      "fetch",
      mockFetch(422, { error: "click outside image bounds", frame: 0, x: 400, y: 2 }),
    );
    const client = new Client("");
    await expect(client.addClick("abc", 0, 400, 2)).rejects.toMatchObject({
      status: 422,
      payload: { error: "click outside image bounds" },
    });
  });

  it("raises ApiError with status 409 for concurrent runs", async () => {
    vi.stubGlobal("fetch", mockFetch(409, { detail: "a run is already in progress" }));
    const client = new Client("");
    const err = await client.run("abc").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(409);
  });

  it("builds frame urls against the base", () => {
    const client = new Client("http://localhost:8077");
    expect(client.frameUrl("abc", 3)).toBe("http://localhost:8077/sessions/abc/frames/3");
  });
});
