/** Wire encoding for evaluation arrays: float64 little-endian bytes, base64.
 *
 * Works in both the browser and node so the same code path is testable
 * headlessly.
 */

interface BufferLike {
  from(bytes: Uint8Array): { toString(encoding: "base64"): string };
}

function bytesToB64(bytes: Uint8Array): string {
  const nodeBuffer = (globalThis as { Buffer?: BufferLike }).Buffer;
  if (nodeBuffer !== undefined) {
    return nodeBuffer.from(bytes).toString("base64");
  }
  let bin = "";
  for (const b of bytes) bin += String.fromCharCode(b);
  return btoa(bin);
}

export function f64ArrayToWire(values: number[], shape: number[]): { b64: string; shape: number[] } {
  const expected = shape.reduce((a, b) => a * b, 1);
  if (values.length !== expected) {
    throw new Error(`shape ${JSON.stringify(shape)} holds ${expected} values, got ${values.length}`);
  }
  const buf = new ArrayBuffer(values.length * 8);
  const view = new DataView(buf);
  values.forEach((v, i) => view.setFloat64(i * 8, v, true));
  return { b64: bytesToB64(new Uint8Array(buf)), shape };
}

export interface EvalSet {
  features: number[][];
  labels: number[];
}

/** Parse the wizard's evaluation-set JSON and report the first problem in
 * terms a form field can show. */
export function parseEvalJson(
  text: string,
  featureDim: number,
  numClasses: number,
): { evalSet: EvalSet | null; error: string | null } {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    return { evalSet: null, error: "evaluation set must be JSON" };
  }
  const obj = raw as { features?: unknown; labels?: unknown };
  if (!Array.isArray(obj.features) || !Array.isArray(obj.labels)) {
    return { evalSet: null, error: "evaluation set needs features and labels arrays" };
  }
  const features = obj.features as unknown[];
  const labels = obj.labels as unknown[];
  if (features.length === 0 || features.length !== labels.length) {
    return { evalSet: null, error: "features and labels must be non-empty and the same length" };
  }
  for (const row of features) {
    if (!Array.isArray(row) || row.length !== featureDim || row.some((v) => typeof v !== "number")) {
      return { evalSet: null, error: `every feature row must hold ${featureDim} numbers` };
    }
  }
  for (const label of labels) {
    if (typeof label !== "number" || !Number.isInteger(label) || label < 0 || label >= numClasses) {
      return { evalSet: null, error: `labels must be integers in [0, ${numClasses})` };
    }
  }
  return { evalSet: { features: features as number[][], labels: labels as number[] }, error: null };
}

export function evalSetToWire(evalSet: EvalSet): {
  eval_features: { b64: string; shape: number[] };
  eval_labels: { b64: string; shape: number[] };
} {
  const n = evalSet.features.length;
  const dim = evalSet.features[0]?.length ?? 0;
  return {
    eval_features: f64ArrayToWire(evalSet.features.flat(), [n, dim]),
    eval_labels: f64ArrayToWire(evalSet.labels, [n]),
  };
}
