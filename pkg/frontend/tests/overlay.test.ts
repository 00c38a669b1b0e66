import { describe, expect, it } from "vitest";
import { MAX_ALPHA, legendStops, overlayCells } from "../src/overlay";

describe("overlayCells", () => {
  it("renders one cell per patch, H_p * W_p total", () => {
    const cells = overlayCells(Array(36).fill(1 / 36), [6, 6], 288, 288);
    expect(cells).toHaveLength(36);
    // Cells tile the canvas exactly.
    expect(cells[0]).toMatchObject({ x: 0, y: 0, w: 48, h: 48 });
    expect(cells[35]).toMatchObject({ x: 240, y: 240, w: 48, h: 48 });
  });

  it("gives a uniform map a uniform overlay at full alpha", () => {
    const cells = overlayCells(Array(16).fill(0.0625), [4, 4], 100, 100);
    for (const c of cells) expect(c.alpha).toBeCloseTo(MAX_ALPHA, 12);
  });

  it("max-normalizes: single peak -> single bright cell", () => {
    const mean = Array(9).fill(0.05);
    mean[4] = 0.6;
    const cells = overlayCells(mean, [3, 3], 90, 90);
    expect(cells[4].alpha).toBeCloseTo(MAX_ALPHA, 12);
    for (const c of cells) {
      if (c.row === 1 && c.col === 1) continue;
      expect(c.alpha).toBeCloseTo((0.05 / 0.6) * MAX_ALPHA, 12);
    }
  });

  it("scales alpha proportionally to attention", () => {
    const cells = overlayCells([0.1, 0.2, 0.4, 0.3], [2, 2], 10, 10);
    expect(cells[1].alpha / cells[0].alpha).toBeCloseTo(2, 12);
    expect(cells[2].alpha).toBeCloseTo(MAX_ALPHA, 12);
  });

  it("renders nothing for an empty map", () => {
    expect(overlayCells([], [6, 6], 288, 288)).toEqual([]);
  });

  it("an all-zero map renders fully transparent cells", () => {
    for (const c of overlayCells([0, 0, 0, 0], [2, 2], 10, 10)) expect(c.alpha).toBe(0);
  });

  it("rejects a map that disagrees with the grid", () => {
    expect(() => overlayCells([0.5, 0.5], [2, 2], 10, 10)).toThrow(RangeError);
    expect(() => overlayCells([1], [0, 3], 10, 10)).toThrow(RangeError);
  });
});

describe("legendStops", () => {
  it("spans zero to the alpha cap", () => {
    const stops = legendStops(5);
    expect(stops[0]).toEqual({ fraction: 0, alpha: 0 });
    expect(stops[4].alpha).toBeCloseTo(MAX_ALPHA, 12);
    expect(stops).toHaveLength(5);
  });
});
