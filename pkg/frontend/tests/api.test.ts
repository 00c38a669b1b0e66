import { describe, expect, it } from "vitest";
import { ApiError, Client, type FetchLike } from "../src/api";
import { encodePoints } from "../src/encode";
import { overlayCells } from "../src/overlay";
import { ScribbleCapture } from "../src/scribble";
import { SessionState, type StorageLike } from "../src/session";
import { makeMockService } from "./mock";

function client(fetchFn: FetchLike): Client {
  return new Client("http://mock", fetchFn);
}

function fakeStorage(): StorageLike {
  const data = new Map<string, string>();
  return {
    getItem: (k) => data.get(k) ?? null,
    setItem: (k, v) => void data.set(k, v),
    removeItem: (k) => void data.delete(k),
  };
}

describe("token string pass-through", () => {
  it("displayed tokens for captured strokes match the documented grammar", async () => {
    const { fetchFn } = makeMockService();
    const cap = new ScribbleCapture(288, 288);
    cap.beginStroke(93, 185); // 93/288, 185/288 — awkward fractions on purpose
    cap.extendStroke(107, 179);
    cap.extendStroke(121, 170);
    cap.endStroke();
    cap.beginStroke(144, 144);
    cap.endStroke();

    const points = cap.normalizedPoints();
    const { tokens } = await client(fetchFn).encode(points);
    // The UI displays `tokens` verbatim; re-encoding locally via the grammar
    // must agree byte-for-byte.
    expect(tokens).toBe(encodePoints(points));
    expect(tokens).toMatch(/^\[\d+ \d+\]( \[\d+ \d+\])*$/);
  });

  it("no strokes -> empty token string (global)", async () => {
    const { fetchFn } = makeMockService();
    const { tokens } = await client(fetchFn).encode([]);
    expect(tokens).toBe("");
  });

  it("caption responses echo the same grammar", async () => {
    const { fetchFn } = makeMockService();
    const points = [{ x: 0.324, y: 0.643 }, { x: 0.369, y: 0.622 }];
    const res = await client(fetchFn).caption("synth-97-00000", points);
    expect(res.tokens).toBe("[32 64] [37 62]");
    expect(res.caption).toContain("synth-97-00000");
  });
});

describe("attention panel", () => {
  it("overlay renders exactly H_p * W_p cells from a service map", async () => {
    const { fetchFn } = makeMockService({ grid: [6, 6], nQueries: 8 });
    const res = await client(fetchFn).attention("synth-97-00000", [{ x: 0.5, y: 0.5 }]);
    expect(res.dims).toEqual([8, 36]);
    expect(res.rows).toHaveLength(8 * 36);
    expect(res.mean).toHaveLength(36);
    const cells = overlayCells(res.mean, res.grid, 288, 288);
    expect(cells).toHaveLength(res.grid[0] * res.grid[1]);
  });

  it("a peaked service map lights exactly one cell fully", async () => {
    const mean = Array(36).fill(0.01);
    mean[14] = 0.65;
    const { fetchFn } = makeMockService({ grid: [6, 6], mean });
    const res = await client(fetchFn).attention("synth-97-00000", []);
    const cells = overlayCells(res.mean, res.grid, 288, 288);
    const bright = cells.filter((c) => c.alpha === Math.max(...cells.map((x) => x.alpha)));
    expect(bright).toHaveLength(1);
    expect(bright[0].row).toBe(2);
    expect(bright[0].col).toBe(2);
  });
});

describe("dialogue flow", () => {
  it("each exchange appends exactly two turns and survives refresh", async () => {
    const { fetchFn } = makeMockService();
    const api = client(fetchFn);
    const storage = fakeStorage();
    const s = new SessionState();
    s.setImage("synth-97-00000");

    const r1 = await api.dialogue(s.imageId!, "what is here", [{ x: 0.3, y: 0.4 }], s.turns);
    s.applyExchange(r1.history);
    s.save(storage);
    expect(s.turns).toHaveLength(2);
    expect(r1.truncated).toBe(false);

    const r2 = await api.dialogue(s.imageId!, "what color is it", [], s.turns);
    s.applyExchange(r2.history);
    s.save(storage);
    expect(s.turns).toHaveLength(4);
    expect(s.turns.map((t) => t.role)).toEqual(["user", "model", "user", "model"]);

    // Refresh: rehydrate from storage and keep talking; the echoed z rows
    // must round-trip so the service can resume statelessly.
    const resumed = SessionState.load(storage);
    expect(resumed.turns).toEqual(s.turns);
    const r3 = await api.dialogue(resumed.imageId!, "third question", [], resumed.turns);
    resumed.applyExchange(r3.history);
    expect(resumed.turns).toHaveLength(6);
    expect(resumed.turns[5].text).toContain("#3");
  });

  it("points and their z rows ride on the user turn; model turns are text-only", async () => {
    const { fetchFn } = makeMockService();
    const res = await client(fetchFn).dialogue("synth-97-00000", "hi", [{ x: 0.5, y: 0.5 }], []);
    expect(res.history[0].points).toEqual([{ x: 0.5, y: 0.5 }]);
    expect(res.history[0].z).toBeDefined();
    expect(res.history[1].points).toBeUndefined();
    expect(res.history[1].z).toBeUndefined();
  });

  it("long conversations get truncated with the flag set, and the session adopts them", async () => {
    const { fetchFn } = makeMockService({ maxTurns: 4 });
    const api = client(fetchFn);
    const s = new SessionState();
    s.setImage("synth-97-00000");
    for (const q of ["q1", "q2"]) {
      const r = await api.dialogue(s.imageId!, q, [], s.turns);
      s.applyExchange(r.history, r.truncated);
    }
    const r3 = await api.dialogue(s.imageId!, "q3", [], s.turns);
    expect(r3.truncated).toBe(true);
    expect(r3.history).toHaveLength(4);
    s.applyExchange(r3.history, r3.truncated); // length did not grow by 2; still adopted
    expect(s.turns.map((t) => t.text)).toEqual(["q2", "mock reply #2 about synth-97-00000", "q3", "mock reply #3 about synth-97-00000"]);
  });
});

describe("error handling", () => {
  it("service errors surface as ApiError with the wire code, not a payload", async () => {
    const { fetchFn } = makeMockService();
    const err = await client(fetchFn)
      .caption("no-such-image", [])
      .then(() => null, (e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).code).toBe("unknown_image");
    expect((err as ApiError).status).toBe(404);
  });

  it("a failed exchange leaves session state unchanged", async () => {
    const { fetchFn } = makeMockService();
    const api = client(fetchFn);
    const s = new SessionState();
    s.setImage("synth-97-00000");
    s.applyExchange((await api.dialogue(s.imageId!, "q1", [], s.turns)).history);
    const before = s.snapshot();
    await expect(api.dialogue(s.imageId!, "   ", [], s.turns)).rejects.toThrow(ApiError);
    expect(s.snapshot()).toEqual(before);
  });

  it("rejects envelopes without exactly one of payload|error", async () => {
    const both: FetchLike = async () => ({
      status: 200,
      json: async () => ({ payload: {}, error: { code: "x", message: "y" } }),
    });
    const neither: FetchLike = async () => ({ status: 200, json: async () => ({ ok: true }) });
    await expect(client(both).health()).rejects.toMatchObject({ code: "bad_envelope" });
    await expect(client(neither).health()).rejects.toMatchObject({ code: "bad_envelope" });
  });

  it("images honors the limit parameter", async () => {
    const { fetchFn } = makeMockService({ imageIds: ["a", "b", "c"] });
    const res = await client(fetchFn).images(2);
    expect(res.images).toEqual(["a", "b"]);
  });
});
