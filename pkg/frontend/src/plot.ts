import * as fs from "node:fs";
import * as path from "node:path";
import { Series, extractSeries } from "./csv.js";

/** Relative errors can be exactly 0 at the reference minimum; clamp for log scale. */
export const LOG_FLOOR = 1e-16;

export interface PlotSpec {
  /** input series: CSV path plus legend label (at least one) */
  csvs: { path: string; label: string }[];
  out: string;
  xAxis: "iteration" | "time";
  logY?: boolean;
}

const WIDTH = 720;
const HEIGHT = 460;
const MARGIN = { left: 70, right: 160, top: 30, bottom: 55 };
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

const esc = (s: string) =>
  s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");

function niceTicks(lo: number, hi: number, count: number): number[] {
  if (hi <= lo) return [lo];
  const span = hi - lo;
  const step = Math.pow(10, Math.floor(Math.log10(span / count)));
  const mult = [1, 2, 5, 10].find((m) => span / (step * m) <= count) ?? 10;
  const s = step * mult;
  const ticks: number[] = [];
  for (let t = Math.ceil(lo / s) * s; t <= hi + 1e-12 * span; t += s) ticks.push(t);
  return ticks;
}

export function renderConvergence(spec: PlotSpec): string {
  if (spec.csvs.length === 0) {
    throw new Error("at least one input series is required");
  }
  const logY = spec.logY ?? true;
  const series = spec.csvs.map((c) => extractSeries(c.path, c.label, spec.xAxis));

  const plotW = WIDTH - MARGIN.left - MARGIN.right;
  const plotH = HEIGHT - MARGIN.top - MARGIN.bottom;

  const allX = series.flatMap((s) => s.x);
  const xMin = Math.min(...allX);
  const xMax = Math.max(...allX);
  const xSpan = xMax - xMin || 1;
  const toX = (v: number) => MARGIN.left + ((v - xMin) / xSpan) * plotW;

  const yVal = (v: number) => (logY ? Math.log10(Math.max(v, LOG_FLOOR)) : v);
  const allY = series.flatMap((s) => s.y.map(yVal));
  let yLo = Math.min(...allY);
  let yHi = Math.max(...allY);
  if (logY) {
    yLo = Math.floor(yLo);
    yHi = Math.ceil(yHi);
  }
  if (yHi <= yLo) yHi = yLo + 1;
  const toY = (v: number) => MARGIN.top + plotH - ((yVal(v) - yLo) / (yHi - yLo)) * plotH;

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" ` +
      `viewBox="0 0 ${WIDTH} ${HEIGHT}" font-family="sans-serif" font-size="12">`,
  );
  parts.push(`<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>`);
  parts.push(
    `<rect x="${MARGIN.left}" y="${MARGIN.top}" width="${plotW}" height="${plotH}" ` +
      `fill="none" stroke="#333"/>`,
  );

  // y-axis: decade ticks when log, linear ticks otherwise
  const yTicks = logY
    ? Array.from({ length: yHi - yLo + 1 }, (_, i) => yLo + i)
    : niceTicks(yLo, yHi, 8);
  for (const t of yTicks) {
    const py = MARGIN.top + plotH - ((t - yLo) / (yHi - yLo)) * plotH;
    const label = logY ? `1e${t}` : String(t);
    parts.push(
      `<line x1="${MARGIN.left}" y1="${py}" x2="${MARGIN.left + plotW}" y2="${py}" ` +
        `stroke="#ddd"/>`,
      `<text x="${MARGIN.left - 8}" y="${py + 4}" text-anchor="end">${label}</text>`,
    );
  }
  for (const t of niceTicks(xMin, xMax, 8)) {
    const px = toX(t);
    parts.push(
      `<line x1="${px}" y1="${MARGIN.top}" x2="${px}" y2="${MARGIN.top + plotH}" stroke="#eee"/>`,
      `<text x="${px}" y="${MARGIN.top + plotH + 18}" text-anchor="middle">${+t.toFixed(6)}</text>`,
    );
  }

  const xLabel = spec.xAxis === "time" ? "time (ms)" : "iteration";
  parts.push(
    `<text x="${MARGIN.left + plotW / 2}" y="${HEIGHT - 12}" text-anchor="middle">${xLabel}</text>`,
    `<text x="16" y="${MARGIN.top + plotH / 2}" text-anchor="middle" ` +
      `transform="rotate(-90 16 ${MARGIN.top + plotH / 2})">relative error</text>`,
  );

  series.forEach((s, i) => {
    const color = COLORS[i % COLORS.length];
    const pts = s.x.map((x, j) => `${toX(x)},${toY(s.y[j])}`).join(" ");
    // data-x / data-y carry the source values verbatim so tooling (and the
    // round-trip test) can read the plotted series back out of the figure
    parts.push(
      `<polyline points="${pts}" fill="none" stroke="${color}" stroke-width="1.8" ` +
        `class="series" data-label="${esc(s.label)}" ` +
        `data-x="${s.x.map(String).join(" ")}" data-y="${s.y.map(String).join(" ")}"/>`,
    );
    const ly = MARGIN.top + 16 + 18 * i;
    const lx = MARGIN.left + plotW + 12;
    parts.push(
      `<line x1="${lx}" y1="${ly - 4}" x2="${lx + 22}" y2="${ly - 4}" stroke="${color}" ` +
        `stroke-width="1.8"/>`,
      `<text x="${lx + 28}" y="${ly}">${esc(s.label)}</text>`,
    );
  });

  parts.push("</svg>");
  const svg = parts.join("\n");
  fs.mkdirSync(path.dirname(path.resolve(spec.out)), { recursive: true });
  fs.writeFileSync(spec.out, svg);
  return svg;
}

export interface ExtractedSeries {
  label: string;
  x: number[];
  y: number[];
}

/** Read the plotted series back out of a rendered SVG file. */
export function extractRendered(svgPath: string): ExtractedSeries[] {
  const text = fs.readFileSync(svgPath, "utf8");
  const out: ExtractedSeries[] = [];
  const re =
    /<polyline[^>]*data-label="([^"]*)"[^>]*data-x="([^"]*)"[^>]*data-y="([^"]*)"[^>]*\/>/g;
  let m: RegExpExecArray | null;
  while ((m = re.exec(text)) !== null) {
    out.push({
      label: m[1],
      x: m[2].split(" ").map(Number),
      y: m[3].split(" ").map(Number),
    });
  }
  return out;
}
