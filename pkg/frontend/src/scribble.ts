// Stroke capture: raw pointer samples in canvas pixels in, normalized points
// out.  Pure data — the DOM layer feeds it translated pointer events, so all
// of this is testable without a browser.

import type { Point } from "./encode";

export interface Sample {
  x: number; // canvas px
  y: number; // canvas px
}

export interface Stroke {
  id: number;
  samples: Sample[];
}

export const DEFAULT_MAX_POINTS = 16;

// Thin out a stroke to at most maxPoints samples, keeping the first and last,
// by even index spacing.  Runs on raw pixel samples, before normalization.
export function downsample(samples: Sample[], maxPoints: number): Sample[] {
  if (maxPoints < 1) throw new RangeError(`maxPoints must be >= 1, got ${maxPoints}`);
  const n = samples.length;
  if (n <= maxPoints) return samples.slice();
  if (maxPoints === 1) return [samples[0]];
  const out: Sample[] = [];
  for (let i = 0; i < maxPoints; i++) {
    out.push(samples[Math.round((i * (n - 1)) / (maxPoints - 1))]);
  }
  return out;
}

export class ScribbleCapture {
  private strokes: Stroke[] = [];
  private active: Stroke | null = null;
  private nextId = 1;

  constructor(
    public width: number,
    public height: number,
    public maxPoints: number = DEFAULT_MAX_POINTS,
  ) {
    if (width <= 0 || height <= 0) throw new RangeError("canvas dims must be positive");
  }

  beginStroke(x: number, y: number): number {
    const stroke: Stroke = { id: this.nextId++, samples: [{ x, y }] };
    this.active = stroke;
    this.strokes.push(stroke);
    return stroke.id;
  }

  extendStroke(x: number, y: number): void {
    if (this.active === null) return; // pointer moved without a press; ignore
    this.active.samples.push({ x, y });
  }

  endStroke(): void {
    this.active = null;
  }

  clear(): void {
    this.strokes = [];
    this.active = null;
  }

  get isEmpty(): boolean {
    return this.strokes.length === 0;
  }

  allStrokes(): Stroke[] {
    return this.strokes.map((s) => ({ id: s.id, samples: s.samples.slice() }));
  }

  // All strokes concatenated, each downsampled to the budget first, then
  // normalized by the canvas dimensions and clamped into [0,1].
  normalizedPoints(): Point[] {
    const out: Point[] = [];
    for (const stroke of this.strokes) {
      for (const s of downsample(stroke.samples, this.maxPoints)) {
        out.push({
          x: Math.min(1, Math.max(0, s.x / this.width)),
          y: Math.min(1, Math.max(0, s.y / this.height)),
        });
      }
    }
    return out;
  }
}
