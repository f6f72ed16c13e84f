/** Accuracy-over-rounds chart, built as a plain SVG string.
 *
 * Pure functions of metric rows so rendering is testable without a DOM.
 * One series per scope; rounds that closed by timeout are drawn hollow so a
 * flat-lining carried model is visually distinct from fresh aggregation.
 */

import type { MetricRow, RoundStatus } from "./types.js";

export interface SeriesPoint {
  round: number;
  accuracy: number | null;
  status: RoundStatus;
}

export interface ScopeSeries {
  scope: string;
  points: SeriesPoint[];
}

export function buildSeries(rows: MetricRow[]): ScopeSeries[] {
  const byScope = new Map<string, SeriesPoint[]>();
  for (const row of rows) {
    let points = byScope.get(row.scope);
    if (points === undefined) {
      points = [];
      byScope.set(row.scope, points);
    }
    points.push({ round: row.round, accuracy: row.accuracy, status: row.status });
  }
  return [...byScope.entries()]
    .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
    .map(([scope, points]) => ({
      scope,
      points: points.sort((a, b) => a.round - b.round),
    }));
}

const PALETTE = ["#2563eb", "#dc2626", "#059669", "#d97706", "#7c3aed", "#0891b2"];

const WIDTH = 640;
const HEIGHT = 300;
const MARGIN = { top: 16, right: 16, bottom: 36, left: 44 };

export interface ChartOptions {
  /** Extend the x axis to the planned round count even before data arrives. */
  roundsPlanned?: number;
}

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");
}

export function chartSvg(series: ScopeSeries[], options: ChartOptions = {}): string {
  const innerW = WIDTH - MARGIN.left - MARGIN.right;
  const innerH = HEIGHT - MARGIN.top - MARGIN.bottom;
  const maxRoundSeen = Math.max(
    0,
    ...series.flatMap((s) => s.points.map((p) => p.round)),
  );
  const maxRound = Math.max(1, options.roundsPlanned ?? 0, maxRoundSeen);

  const x = (round: number) =>
    MARGIN.left + (maxRound === 1 ? innerW / 2 : ((round - 1) / (maxRound - 1)) * innerW);
  const y = (accuracy: number) => MARGIN.top + (1 - accuracy) * innerH;

  const parts: string[] = [];
  parts.push(
    `<svg viewBox="0 0 ${WIDTH} ${HEIGHT}" class="chart" role="img" aria-label="accuracy per round">`,
  );

  // axes and gridlines at fixed accuracy steps; accuracy lives in [0, 1]
  for (const tick of [0, 0.25, 0.5, 0.75, 1]) {
    const ty = y(tick);
    parts.push(
      `<line class="grid" x1="${MARGIN.left}" y1="${ty}" x2="${WIDTH - MARGIN.right}" y2="${ty}"/>`,
      `<text class="tick" x="${MARGIN.left - 6}" y="${ty + 4}" text-anchor="end">${tick.toFixed(2)}</text>`,
    );
  }
  const roundStep = Math.max(1, Math.ceil(maxRound / 10));
  const ticks: number[] = [];
  for (let r = 1; r <= maxRound; r += roundStep) ticks.push(r);
  // the last planned round always gets a label; drop its neighbor if crowded
  if (ticks[ticks.length - 1] !== maxRound) {
    if (maxRound - ticks[ticks.length - 1]! < roundStep / 2) ticks.pop();
    ticks.push(maxRound);
  }
  for (const r of ticks) {
    parts.push(
      `<text class="tick" x="${x(r)}" y="${HEIGHT - MARGIN.bottom + 16}" text-anchor="middle">${r}</text>`,
    );
  }
  parts.push(
    `<line class="axis" x1="${MARGIN.left}" y1="${MARGIN.top}" x2="${MARGIN.left}" y2="${HEIGHT - MARGIN.bottom}"/>`,
    `<line class="axis" x1="${MARGIN.left}" y1="${HEIGHT - MARGIN.bottom}" x2="${WIDTH - MARGIN.right}" y2="${HEIGHT - MARGIN.bottom}"/>`,
  );

  series.forEach((scopeSeries, index) => {
    const color = PALETTE[index % PALETTE.length];
    const plotted = scopeSeries.points.filter(
      (p): p is SeriesPoint & { accuracy: number } => p.accuracy !== null,
    );
    if (plotted.length > 1) {
      const path = plotted.map((p) => `${x(p.round).toFixed(1)},${y(p.accuracy).toFixed(1)}`).join(" ");
      parts.push(`<polyline class="line" points="${path}" stroke="${color}"/>`);
    }
    for (const p of plotted) {
      const hollow = p.status === "TimedOut";
      parts.push(
        `<circle class="pt${hollow ? " pt-timeout" : ""}" cx="${x(p.round).toFixed(1)}" cy="${y(p.accuracy).toFixed(1)}" r="4" ` +
          (hollow ? `fill="none" stroke="${color}" stroke-width="2"` : `fill="${color}"`) +
          `><title>${esc(scopeSeries.scope)} round ${p.round}: ${p.accuracy.toFixed(4)} (${p.status})</title></circle>`,
      );
    }
    parts.push(
      `<text class="legend" x="${WIDTH - MARGIN.right}" y="${MARGIN.top + 14 * (index + 1)}" text-anchor="end" fill="${color}">${esc(scopeSeries.scope)}</text>`,
    );
  });

  if (series.every((s) => s.points.every((p) => p.accuracy === null))) {
    parts.push(
      `<text class="empty" x="${WIDTH / 2}" y="${HEIGHT / 2}" text-anchor="middle">no evaluation data yet</text>`,
    );
  }

  parts.push("</svg>");
  return parts.join("");
}

/** Count of plotted points, which the monitor shows as a progress hint. */
export function pointCount(series: ScopeSeries[], scope?: string): number {
  return series
    .filter((s) => scope === undefined || s.scope === scope)
    .reduce((acc, s) => acc + s.points.filter((p) => p.accuracy !== null).length, 0);
}
