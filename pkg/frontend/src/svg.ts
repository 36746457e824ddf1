/** Minimal deterministic SVG scene builder: fixed canvas, linear scales,
 * axes with tick labels, polylines, circles, and a legend. Output depends
 * only on the input data, so re-rendering the same CSV is byte-identical. */

export const WIDTH = 640;
export const HEIGHT = 480;
export const MARGIN = { top: 24, right: 24, bottom: 48, left: 64 };

export interface Series {
  label: string;
  color: string;
  points: Array<[number, number]>;
  /** "line" joins the points in order; "scatter" draws circles only. */
  mode: "line" | "scatter";
}

export interface Scene {
  series: Series[];
  xlabel: string;
  ylabel: string;
  /** Draw the y = x reference diagonal (QQ figures). */
  diagonal?: boolean;
}

function fmt(value: number): string {
  if (!Number.isFinite(value)) {
    throw new Error(`non-finite coordinate: ${value}`);
  }
  return Number(value.toPrecision(6)).toString();
}

export interface LinearScale {
  (value: number): number;
  domain: [number, number];
}

export function linearScale(
  values: number[],
  range: [number, number],
): LinearScale {
  let lo = Math.min(...values);
  let hi = Math.max(...values);
  if (lo === hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  const pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const scale = ((value: number) =>
    range[0] + ((value - lo) / (hi - lo)) * (range[1] - range[0])) as LinearScale;
  scale.domain = [lo, hi];
  return scale;
}

export function ticks(domain: [number, number], count = 5): number[] {
  const span = domain[1] - domain[0];
  const step = Math.pow(10, Math.floor(Math.log10(span / count)));
  const err = (span / count) / step;
  const unit = err >= 7.5 ? 10 : err >= 3.5 ? 5 : err >= 1.5 ? 2 : 1;
  const inc = unit * step;
  const start = Math.ceil(domain[0] / inc) * inc;
  const out: number[] = [];
  for (let v = start; v <= domain[1] + 1e-12 * inc; v += inc) {
    out.push(Number(v.toPrecision(12)));
  }
  return out;
}

function escapeXml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderScene(scene: Scene): string {
  let xs = scene.series.flatMap((s) => s.points.map((p) => p[0]));
  let ys = scene.series.flatMap((s) => s.points.map((p) => p[1]));
  if (xs.length === 0) {
    throw new Error("nothing to draw: every series is empty");
  }
  if (scene.diagonal) {
    // share one domain so the diagonal stays within view
    const all = [...xs, ...ys];
    xs = all;
    ys = all;
  }
  const sx = linearScale(xs, [MARGIN.left, WIDTH - MARGIN.right]);
  const sy = linearScale(ys, [HEIGHT - MARGIN.bottom, MARGIN.top]);

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" viewBox="0 0 ${WIDTH} ${HEIGHT}" font-family="sans-serif" font-size="12">`,
  );
  parts.push(`<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>`);

  // axes
  const x0 = MARGIN.left;
  const x1 = WIDTH - MARGIN.right;
  const y0 = HEIGHT - MARGIN.bottom;
  const y1 = MARGIN.top;
  parts.push(
    `<line x1="${x0}" y1="${y0}" x2="${x1}" y2="${y0}" stroke="black"/>`,
    `<line x1="${x0}" y1="${y0}" x2="${x0}" y2="${y1}" stroke="black"/>`,
  );
  for (const t of ticks(sx.domain)) {
    const px = fmt(sx(t));
    parts.push(
      `<line x1="${px}" y1="${y0}" x2="${px}" y2="${y0 + 5}" stroke="black"/>`,
      `<text x="${px}" y="${y0 + 18}" text-anchor="middle">${fmt(t)}</text>`,
    );
  }
  for (const t of ticks(sy.domain)) {
    const py = fmt(sy(t));
    parts.push(
      `<line x1="${x0 - 5}" y1="${py}" x2="${x0}" y2="${py}" stroke="black"/>`,
      `<text x="${x0 - 8}" y="${py}" text-anchor="end" dominant-baseline="middle">${fmt(t)}</text>`,
    );
  }
  parts.push(
    `<text x="${(x0 + x1) / 2}" y="${HEIGHT - 10}" text-anchor="middle">${escapeXml(scene.xlabel)}</text>`,
    `<text x="16" y="${(y0 + y1) / 2}" text-anchor="middle" transform="rotate(-90 16 ${(y0 + y1) / 2})">${escapeXml(scene.ylabel)}</text>`,
  );

  if (scene.diagonal) {
    const lo = Math.max(sx.domain[0], sy.domain[0]);
    const hi = Math.min(sx.domain[1], sy.domain[1]);
    parts.push(
      `<line x1="${fmt(sx(lo))}" y1="${fmt(sy(lo))}" x2="${fmt(sx(hi))}" y2="${fmt(sy(hi))}" stroke="#888888" stroke-dasharray="4 3"/>`,
    );
  }

  for (const series of scene.series) {
    if (series.mode === "line") {
      const path = series.points
        .map((p) => `${fmt(sx(p[0]))},${fmt(sy(p[1]))}`)
        .join(" ");
      parts.push(
        `<polyline points="${path}" fill="none" stroke="${series.color}" stroke-width="1.5"/>`,
      );
    }
    for (const p of series.points) {
      parts.push(
        `<circle cx="${fmt(sx(p[0]))}" cy="${fmt(sy(p[1]))}" r="3" fill="${series.color}"/>`,
      );
    }
  }

  // legend, top-right
  scene.series.forEach((series, i) => {
    const ly = MARGIN.top + 8 + 18 * i;
    parts.push(
      `<rect x="${x1 - 130}" y="${ly - 8}" width="10" height="10" fill="${series.color}"/>`,
      `<text x="${x1 - 115}" y="${ly}" dominant-baseline="middle">${escapeXml(series.label)}</text>`,
    );
  });

  parts.push("</svg>");
  return parts.join("\n");
}
