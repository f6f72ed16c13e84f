/** View model for one job, derived from server responses and nothing else.
 *
 * The monitor re-derives this on every poll; there is no client-side truth
 * that could drift from the server (the invariant the whole dashboard is
 * built around).
 */

import { buildSeries, type ScopeSeries } from "./series.js";
import type { MetricsResponse } from "./types.js";

export interface JobView {
  jobId: string;
  statusLabel: string;
  configuring: boolean;
  running: boolean;
  /** completed or terminated: freeze the chart and offer the report. */
  finished: boolean;
  roundsPlanned: number;
  closedRounds: number;
  budgetRemaining: number;
  series: ScopeSeries[];
  timedOutRounds: number[];
}

export function deriveView(metrics: MetricsResponse): JobView {
  const closedRoundSet = new Set(metrics.rows.map((row) => row.round));
  const closedRounds = closedRoundSet.size;
  const budgetRemaining = Math.max(0, metrics.rounds_planned - closedRounds);

  let statusLabel: string;
  switch (metrics.status) {
    case "configuring":
      statusLabel = "configuring";
      break;
    case "running":
      statusLabel = `round ${metrics.current_round}/${metrics.rounds_planned}`;
      break;
    case "completed":
      statusLabel =
        metrics.completed_reason === "budget_exhausted"
          ? "completed (budget exhausted)"
          : "completed";
      break;
    case "terminated":
      statusLabel = "terminated";
      break;
  }

  const timedOut = [
    ...new Set(
      metrics.rows.filter((row) => row.status === "TimedOut").map((row) => row.round),
    ),
  ].sort((a, b) => a - b);

  return {
    jobId: metrics.job_id,
    statusLabel,
    configuring: metrics.status === "configuring",
    running: metrics.status === "running",
    finished: metrics.status === "completed" || metrics.status === "terminated",
    roundsPlanned: metrics.rounds_planned,
    closedRounds,
    budgetRemaining,
    series: buildSeries(metrics.rows),
    timedOutRounds: timedOut,
  };
}
