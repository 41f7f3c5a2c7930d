// Canvas drawing for the per-link cards. The coordinate math lives in pure
// helpers; the draw functions only move a context around.

/**
 * Pixel polyline for a metric history. NaN samples (missing periods) are
 * dropped, the x axis always spans the full history window so short traces
 * start at the left edge and grow rightward.
 */
export function sparklinePoints(
  values: number[],
  width: number,
  height: number,
  window: number = 60,
): [number, number][] {
  const finite = values.filter(Number.isFinite);
  if (finite.length < 2) return [];
  let lo = Math.min(...finite);
  let hi = Math.max(...finite);
  if (hi - lo < 1e-9) {
    lo -= 0.5;
    hi += 0.5;
  }
  const pad = 0.08 * (hi - lo);
  lo -= pad;
  hi += pad;
  const dx = width / Math.max(1, window - 1);
  const pts: [number, number][] = [];
  values.forEach((v, i) => {
    if (!Number.isFinite(v)) return;
    pts.push([i * dx, height - ((v - lo) / (hi - lo)) * height]);
  });
  return pts;
}

/**
 * Map complex-plane points into pixels with a fixed span so the scatter
 * does not rescale itself every period as the noise moves.
 */
export function scatterPoints(
  points: [number, number][],
  width: number,
  height: number,
  span: number = 1.6,
): [number, number][] {
  const half = span;
  return points.map(([re, im]) => [
    ((re + half) / (2 * half)) * width,
    height - ((im + half) / (2 * half)) * height,
  ]);
}

export function drawSparkline(
  ctx: CanvasRenderingContext2D,
  values: number[],
  width: number,
  height: number,
  color: string,
  window: number = 60,
): void {
  const pts = sparklinePoints(values, width, height, window);
  if (pts.length < 2) return;
  ctx.strokeStyle = color;
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.moveTo(pts[0][0], pts[0][1]);
  for (let i = 1; i < pts.length; i++) ctx.lineTo(pts[i][0], pts[i][1]);
  ctx.stroke();
}

export function drawConstellation(
  ctx: CanvasRenderingContext2D,
  points: [number, number][],
  width: number,
  height: number,
  color: string,
): void {
  ctx.fillStyle = color;
  for (const [x, y] of scatterPoints(points, width, height)) {
    if (x < 0 || x > width || y < 0 || y > height) continue;
    ctx.fillRect(x - 0.5, y - 0.5, 1.5, 1.5);
  }
}
