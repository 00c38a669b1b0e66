// Point-token grammar, mirrored from the service so tests can verify the
// displayed string byte-for-byte.  The UI itself always shows the string the
// service returned; this module is the reference the tests compare against.
//
// Grammar: each point (x, y) in [0,1]^2 quantizes to integers round-half-up
// of 100*x and 100*y on the *decimal* value (shortest decimal repr of the
// float, not its binary expansion), rendered "[X Y]", points joined by a
// single space.  No points -> empty string.

export interface Point {
  x: number;
  y: number;
}

// Round-half-up of 100*v for v in [0, 1], operating on the shortest decimal
// representation so 0.285 -> "28.5" -> 29 even though the binary float sits
// just below 0.285.
export function quantize(v: number): number {
  if (!Number.isFinite(v) || v < 0 || v > 1) {
    throw new RangeError(`coordinate out of range [0, 1]: ${v}`);
  }
  let s = v.toString();
  if (s.includes("e") || s.includes("E")) {
    // Only sub-1e-6 magnitudes print in scientific form for v in [0,1];
    // they all quantize to 0.
    return 0;
  }
  const [intPart, fracPart = ""] = s.split(".");
  const frac = fracPart + "00"; // ensure at least two digits past the point
  const shifted = parseInt(intPart, 10) * 100 + parseInt(frac.slice(0, 2), 10);
  const rest = frac.slice(2);
  // Half-up: remainder >= 0.5 exactly when its first digit is >= 5.
  const roundUp = rest.length > 0 && rest[0] >= "5";
  return shifted + (roundUp ? 1 : 0);
}

export function encodePoints(points: Point[]): string {
  return points.map((p) => `[${quantize(p.x)} ${quantize(p.y)}]`).join(" ");
}
