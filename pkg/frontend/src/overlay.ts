// Attention overlay geometry: turn a per-patch attention vector into
// positioned cells with alpha proportional to attention, max-normalized per
// render.  Pure math; the DOM layer just paints the rects it gets back.

export interface OverlayCell {
  row: number;
  col: number;
  x: number; // px
  y: number; // px
  w: number; // px
  h: number; // px
  alpha: number; // 0..MAX_ALPHA, proportional to attention / max(attention)
}

export const MAX_ALPHA = 0.72; // cap so the image stays visible underneath

export function overlayCells(
  mean: number[],
  grid: [number, number],
  canvasW: number,
  canvasH: number,
): OverlayCell[] {
  const [rows, cols] = grid;
  if (rows <= 0 || cols <= 0) throw new RangeError(`bad grid ${rows}x${cols}`);
  if (mean.length === 0) return []; // nothing to show -> no overlay
  if (mean.length !== rows * cols) {
    throw new RangeError(`map has ${mean.length} cells, grid wants ${rows * cols}`);
  }
  const peak = Math.max(...mean);
  const cellW = canvasW / cols;
  const cellH = canvasH / rows;
  const out: OverlayCell[] = [];
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      const v = mean[r * cols + c];
      out.push({
        row: r,
        col: c,
        x: c * cellW,
        y: r * cellH,
        w: cellW,
        h: cellH,
        // peak === 0 means an all-zero map: uniform nothing.
        alpha: peak > 0 ? (v / peak) * MAX_ALPHA : 0,
      });
    }
  }
  return out;
}

// Legend stops for the side bar: fractions of the peak with their alphas.
export function legendStops(n = 5): { fraction: number; alpha: number }[] {
  const stops: { fraction: number; alpha: number }[] = [];
  for (let i = 0; i < n; i++) {
    const fraction = i / (n - 1);
    stops.push({ fraction, alpha: fraction * MAX_ALPHA });
  }
  return stops;
}
