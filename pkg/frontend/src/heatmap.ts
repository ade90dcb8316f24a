// Per-vertex feasibility classes decoded from the quality scalar and the
// Fig.-2-style color legend: skin tone for out-of-range, dark red for
// occluded, grey for unreachable, and a blue-to-yellow ramp over cost for
// feasible points (deepest blue = best).

export type VertexClass =
  | "feasible"
  | "out_of_range"
  | "occluded"
  | "air_blocked"
  | "unreachable";

const SENTINELS: Record<number, VertexClass> = {
  2: "out_of_range",
  3: "occluded",
  4: "air_blocked",
  5: "unreachable",
};

export function classifyQuality(q: number): VertexClass {
  if (q >= 2.0 && Number.isInteger(q) && q in SENTINELS) return SENTINELS[q];
  if (q >= 0.0 && q <= 1.0) return "feasible";
  throw new Error(`quality scalar out of contract: ${q}`);
}

export const CLASS_COLORS: Record<Exclude<VertexClass, "feasible">, [number, number, number]> = {
  out_of_range: [0.85, 0.72, 0.6], // skin tone
  occluded: [0.55, 0.05, 0.05],    // dark red
  air_blocked: [0.85, 0.45, 0.1],
  unreachable: [0.55, 0.55, 0.55], // grey
};

/** Perceptually ordered blue -> yellow ramp over normalized cost. */
export function costColor(t: number): [number, number, number] {
  const x = Math.min(Math.max(t, 0), 1);
  return [0.05 + 0.9 * x, 0.15 + 0.75 * x, 0.95 - 0.75 * x];
}

export interface ColorOptions {
  hidden?: Set<VertexClass>;
  costRange?: [number, number];
}

export function vertexColors(quality: Float64Array, opts: ColorOptions = {}): Float32Array {
  const hidden = opts.hidden ?? new Set<VertexClass>();
  let lo = Infinity;
  let hi = -Infinity;
  for (const q of quality) {
    if (q <= 1.0) {
      lo = Math.min(lo, q);
      hi = Math.max(hi, q);
    }
  }
  if (opts.costRange) [lo, hi] = opts.costRange;
  const span = hi > lo ? hi - lo : 1;
  const colors = new Float32Array(quality.length * 3);
  for (let i = 0; i < quality.length; i++) {
    const cls = classifyQuality(quality[i]);
    let rgb: [number, number, number];
    if (cls === "feasible") {
      rgb = costColor((quality[i] - lo) / span);
    } else {
      rgb = CLASS_COLORS[cls];
    }
    if (hidden.has(cls)) rgb = [0.12, 0.12, 0.14]; // backdrop tone
    colors[3 * i] = rgb[0];
    colors[3 * i + 1] = rgb[1];
    colors[3 * i + 2] = rgb[2];
  }
  return colors;
}
