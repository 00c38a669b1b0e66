import { describe, expect, it } from "vitest";
import { ScribbleCapture, downsample, type Sample } from "../src/scribble";

function line(n: number, width: number, y: number): Sample[] {
  return Array.from({ length: n }, (_, i) => ({ x: (i * width) / (n - 1), y }));
}

describe("downsample", () => {
  it("keeps short strokes untouched", () => {
    const pts = line(5, 100, 10);
    expect(downsample(pts, 16)).toEqual(pts);
  });

  it("thins to the budget and keeps both endpoints", () => {
    const pts = line(100, 100, 10);
    const out = downsample(pts, 16);
    expect(out).toHaveLength(16);
    expect(out[0]).toEqual(pts[0]);
    expect(out[15]).toEqual(pts[99]);
  });

  it("budget of one keeps the first sample", () => {
    expect(downsample(line(10, 100, 0), 1)).toEqual([{ x: 0, y: 0 }]);
  });

  it("rejects a non-positive budget", () => {
    expect(() => downsample(line(3, 10, 0), 0)).toThrow(RangeError);
  });
});

describe("ScribbleCapture", () => {
  it("turns a single click into exactly one normalized point", () => {
    const cap = new ScribbleCapture(288, 288);
    cap.beginStroke(144, 72);
    cap.endStroke();
    expect(cap.normalizedPoints()).toEqual([{ x: 0.5, y: 0.25 }]);
  });

  it("normalizes a full-width stroke so x spans [0, 1]", () => {
    const cap = new ScribbleCapture(288, 288);
    cap.beginStroke(0, 144);
    for (const s of line(50, 288, 144).slice(1)) cap.extendStroke(s.x, s.y);
    cap.endStroke();
    const xs = cap.normalizedPoints().map((p) => p.x);
    expect(Math.min(...xs)).toBe(0);
    expect(Math.max(...xs)).toBe(1);
  });

  it("downsamples before normalization", () => {
    const cap = new ScribbleCapture(288, 288, 8);
    cap.beginStroke(0, 0);
    for (let i = 1; i < 200; i++) cap.extendStroke(i, i);
    cap.endStroke();
    expect(cap.normalizedPoints()).toHaveLength(8);
  });

  it("clamps samples that leave the canvas", () => {
    const cap = new ScribbleCapture(100, 100);
    cap.beginStroke(-5, 120);
    cap.endStroke();
    expect(cap.normalizedPoints()).toEqual([{ x: 0, y: 1 }]);
  });

  it("concatenates strokes in draw order with distinct ids", () => {
    const cap = new ScribbleCapture(100, 100);
    const a = cap.beginStroke(10, 10);
    cap.endStroke();
    const b = cap.beginStroke(90, 90);
    cap.endStroke();
    expect(a).not.toBe(b);
    expect(cap.normalizedPoints()).toEqual([
      { x: 0.1, y: 0.1 },
      { x: 0.9, y: 0.9 },
    ]);
  });

  it("clearing resets the capture", () => {
    const cap = new ScribbleCapture(100, 100);
    cap.beginStroke(10, 10);
    cap.endStroke();
    expect(cap.isEmpty).toBe(false);
    cap.clear();
    expect(cap.isEmpty).toBe(true);
    expect(cap.normalizedPoints()).toEqual([]);
  });

  it("ignores moves without an active stroke", () => {
    const cap = new ScribbleCapture(100, 100);
    cap.extendStroke(50, 50);
    expect(cap.normalizedPoints()).toEqual([]);
  });

  it("rejects degenerate canvas dimensions", () => {
    expect(() => new ScribbleCapture(0, 100)).toThrow(RangeError);
  });
});
