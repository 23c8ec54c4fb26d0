// Pure geometry for the SVG charts: linear scales, polyline and band paths,
// and marker positions.  No data transformation happens here beyond mapping
// values to pixels, so rendered geometry is traceable to API payloads.

export interface Scale {
  (value: number): number;
  domain: [number, number];
  range: [number, number];
}

export function linearScale(domain: [number, number], range: [number, number]): Scale {
  const [d0, d1] = domain;
  const [r0, r1] = range;
  const span = d1 - d0 || 1;
  const fn = ((value: number) => r0 + ((value - d0) / span) * (r1 - r0)) as Scale;
  fn.domain = domain;
  fn.range = range;
  return fn;
}

export interface XY {
  x: number;
  y: number;
}

export function linePath(points: XY[], xScale: Scale, yScale: Scale): string {
  if (points.length === 0) return "";
  return points
    .map((p, i) => `${i === 0 ? "M" : "L"}${xScale(p.x).toFixed(2)},${yScale(p.y).toFixed(2)}`)
    .join("");
}

/** Closed path for a low/high band around a shared x grid. */
export function bandPath(
  xs: number[],
  low: number[],
  high: number[],
  xScale: Scale,
  yScale: Scale,
): string {
  if (xs.length === 0) return "";
  const upper = xs.map(
    (x, i) => `${i === 0 ? "M" : "L"}${xScale(x).toFixed(2)},${yScale(high[i]!).toFixed(2)}`,
  );
  const lower = [...xs.keys()]
    .reverse()
    .map((i) => `L${xScale(xs[i]!).toFixed(2)},${yScale(low[i]!).toFixed(2)}`);
  return upper.join("") + lower.join("") + "Z";
}

/**
 * x-pixel where a sampled curve first crosses a level, interpolating
 * linearly between neighbouring samples; null when it never crosses.
 */
export function crossingX(
  points: XY[],
  level: number,
  xScale: Scale,
): number | null {
  for (let i = 1; i < points.length; i++) {
    const a = points[i - 1]!;
    const b = points[i]!;
    if ((a.y - level) * (b.y - level) <= 0 && a.y !== b.y) {
      const frac = (a.y - level) / (a.y - b.y);
      return xScale(a.x + frac * (b.x - a.x));
    }
  }
  return null;
}

export function markerX(time: number, xScale: Scale): number {
  return xScale(time);
}

/** Evenly spaced axis ticks (domain units). */
export function ticks(domain: [number, number], count: number): number[] {
  const [lo, hi] = domain;
  const step = (hi - lo) / Math.max(count - 1, 1);
  return Array.from({ length: count }, (_, i) => lo + i * step);
}
