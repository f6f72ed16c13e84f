/** Parser for the server's metrics CSV and a comparator against the JSON
 * rows, used by the report view and the end-to-end test to prove the
 * downloaded file says exactly what the API says.
 *
 * The server writes RFC-4180 style: \r\n line endings, quoting only when
 * needed, accuracy column empty for rounds without evaluation.
 */

import type { MetricRow, RoundStatus } from "./types.js";

export function parseCsv(text: string): string[][] {
  const rows: string[][] = [];
  let field = "";
  let row: string[] = [];
  let inQuotes = false;
  let i = 0;
  while (i < text.length) {
    const ch = text[i];
    if (inQuotes) {
      if (ch === '"') {
        if (text[i + 1] === '"') {
          field += '"';
          i += 2;
          continue;
        }
        inQuotes = false;
        i += 1;
        continue;
      }
      field += ch;
      i += 1;
      continue;
    }
    if (ch === '"') {
      inQuotes = true;
      i += 1;
      continue;
    }
    if (ch === ",") {
      row.push(field);
      field = "";
      i += 1;
      continue;
    }
    if (ch === "\r" || ch === "\n") {
      // \r\n counts once; bare \n tolerated
      if (ch === "\r" && text[i + 1] === "\n") i += 1;
      row.push(field);
      rows.push(row);
      field = "";
      row = [];
      i += 1;
      continue;
    }
    field += ch;
    i += 1;
  }
  if (field.length > 0 || row.length > 0) {
    row.push(field);
    rows.push(row);
  }
  return rows;
}

export const METRICS_HEADER = ["round", "scope", "seed", "accuracy", "n_updates", "status"];

export function csvToMetricRows(text: string): MetricRow[] {
  const parsed = parseCsv(text);
  const header = parsed[0];
  if (header === undefined || header.join(",") !== METRICS_HEADER.join(",")) {
    throw new Error(`unexpected metrics header: ${header?.join(",") ?? "(empty file)"}`);
  }
  return parsed.slice(1).map((cells, index) => {
    if (cells.length !== METRICS_HEADER.length) {
      throw new Error(`row ${index + 1} has ${cells.length} fields`);
    }
    const [round, scope, seed, accuracy, nUpdates, status] = cells as [
      string,
      string,
      string,
      string,
      string,
      string,
    ];
    return {
      round: Number(round),
      scope,
      seed: Number(seed),
      accuracy: accuracy === "" ? null : Number(accuracy),
      n_updates: Number(nUpdates),
      status: status as RoundStatus,
    };
  });
}

/** Exact comparison: accuracies are round-trip serialized doubles, so numeric
 * equality (not tolerance) is the right test. */
export function csvMatchesRows(
  csvText: string,
  rows: MetricRow[],
): { ok: boolean; reason: string | null } {
  let fromCsv: MetricRow[];
  try {
    fromCsv = csvToMetricRows(csvText);
  } catch (error) {
    return { ok: false, reason: error instanceof Error ? error.message : String(error) };
  }
  if (fromCsv.length !== rows.length) {
    return { ok: false, reason: `csv has ${fromCsv.length} rows, api has ${rows.length}` };
  }
  for (let i = 0; i < rows.length; i += 1) {
    const a = fromCsv[i]!;
    const b = rows[i]!;
    const same =
      a.round === b.round &&
      a.scope === b.scope &&
      a.seed === b.seed &&
      (a.accuracy === null ? b.accuracy === null : a.accuracy === b.accuracy) &&
      a.n_updates === b.n_updates &&
      a.status === b.status;
    if (!same) {
      return { ok: false, reason: `row ${i} differs: csv ${JSON.stringify(a)} api ${JSON.stringify(b)}` };
    }
  }
  return { ok: true, reason: null };
}
