/** Client-side validation for the job creation wizard.
 *
 * Every rule here mirrors a bound the server enforces at job creation, so a
 * draft that passes locally can still be rejected only for reasons the client
 * cannot know (missing grants, duplicate ids, server state). Server rejections
 * are mapped back onto form fields by detail-message matching.
 */

import { evalSetToWire, parseEvalJson } from "./encode.js";
import { requiredGrants } from "./grid.js";
import {
  CAPABILITIES,
  MODES,
  SCENARIOS,
  type Capability,
  type JobConfigBody,
  type Mode,
  type Scenario,
} from "./types.js";

/** Raw wizard form state. Strings come straight from inputs. */
export interface JobDraft {
  scenario: Scenario;
  scope_id: string;
  /** Comma-separated app ids for joint groups / new-problem secondaries. */
  members: string;
  mode: Mode | "";
  rounds: string;
  client_fraction: string;
  epochs: string;
  batch_size: string;
  learning_rate: string;
  feature_dim: string;
  num_classes: string;
  seed: string;
  timeout_s: string;
  max_budget_rounds: string;
  epsilon: string;
  /** Optional JSON {"features": [[...]], "labels": [...]}; the server
   * evaluates each round's model on it and the chart plots the result. */
  eval_json: string;
  configure_only: boolean;
}

export function emptyDraft(): JobDraft {
  return {
    scenario: "joint",
    scope_id: "",
    members: "",
    mode: "data",
    rounds: "10",
    client_fraction: "1.0",
    epochs: "1",
    batch_size: "20",
    learning_rate: "0.003",
    feature_dim: "16",
    num_classes: "10",
    seed: "0",
    timeout_s: "60",
    max_budget_rounds: "10000",
    epsilon: "",
    eval_json: "",
    configure_only: true,
  };
}

export type FieldErrors = Partial<Record<keyof JobDraft, string>>;

function asInt(value: string): number | null {
  if (!/^-?\d+$/.test(value.trim())) return null;
  return Number(value.trim());
}

function asFloat(value: string): number | null {
  const n = Number(value.trim());
  return value.trim().length > 0 && Number.isFinite(n) ? n : null;
}

export function parseMembers(raw: string): string[] {
  const seen = new Set<string>();
  const out: string[] = [];
  for (const part of raw.split(",")) {
    const name = part.trim();
    if (name.length > 0 && !seen.has(name)) {
      seen.add(name);
      out.push(name);
    }
  }
  return out;
}

export function validateDraft(draft: JobDraft): FieldErrors {
  const errors: FieldErrors = {};

  if (!SCENARIOS.includes(draft.scenario)) {
    errors.scenario = "unknown scenario";
  }
  if (draft.scope_id.trim().length === 0) {
    errors.scope_id = "scope id must be non-empty";
  }

  const members = parseMembers(draft.members);
  if (draft.scenario === "single") {
    if (members.length > 0) errors.members = "single-app jobs take no members";
    if (draft.mode !== "") errors.mode = "single-app jobs take no mode";
  } else if (draft.scenario === "joint") {
    if (!MODES.includes(draft.mode as Mode)) {
      errors.mode = "joint jobs need a sharing mode";
    }
    if (members.length === 0) {
      errors.members = "joint jobs need at least one group member";
    }
  } else {
    // new_problem: ensembles never leave the device, so only data mode
    // is a server-side job.
    if (draft.mode !== "data") {
      errors.mode = "new-problem jobs support data mode only";
    }
    if (members.length === 0) {
      errors.members = "new-problem jobs need at least one secondary app";
    }
  }

  const ints: Array<[keyof JobDraft, number, string]> = [
    ["rounds", 1, "rounds must be >= 1"],
    ["epochs", 1, "epochs must be >= 1"],
    ["batch_size", 1, "batch size must be >= 1"],
    ["feature_dim", 1, "feature dim must be >= 1"],
    ["num_classes", 2, "classes must be >= 2"],
    ["max_budget_rounds", 1, "budget must be >= 1"],
  ];
  for (const [field, min, message] of ints) {
    const n = asInt(String(draft[field]));
    if (n === null || n < min) errors[field] = message;
  }
  if (asInt(draft.seed) === null) {
    errors.seed = "seed must be an integer";
  }

  const fraction = asFloat(draft.client_fraction);
  if (fraction === null || fraction <= 0 || fraction > 1) {
    errors.client_fraction = "client fraction must be in (0, 1]";
  }
  const lr = asFloat(draft.learning_rate);
  if (lr === null || lr <= 0) {
    errors.learning_rate = "learning rate must be positive";
  }
  const timeout = asFloat(draft.timeout_s);
  if (timeout === null || timeout <= 0) {
    errors.timeout_s = "round timeout must be positive";
  }
  if (draft.epsilon.trim().length > 0) {
    const eps = asFloat(draft.epsilon);
    if (eps === null || eps < 0) errors.epsilon = "epsilon must be >= 0 when given";
  }

  if (draft.eval_json.trim().length > 0 && errors.feature_dim === undefined && errors.num_classes === undefined) {
    const { error } = parseEvalJson(
      draft.eval_json,
      Number(draft.feature_dim),
      Number(draft.num_classes),
    );
    if (error !== null) errors.eval_json = error;
  }

  return errors;
}

/** Convert a validated draft into the POST /jobs body. */
export function draftToBody(
  draft: JobDraft,
  grants: Array<[string, string, Capability]> = [],
): JobConfigBody {
  const body: JobConfigBody = {
    scenario: draft.scenario,
    scope_id: draft.scope_id.trim(),
    feature_dim: Number(draft.feature_dim),
    num_classes: Number(draft.num_classes),
    rounds: Number(draft.rounds),
    seed: Number(draft.seed),
    client_fraction: Number(draft.client_fraction),
    timeout_s: Number(draft.timeout_s),
    max_budget_rounds: Number(draft.max_budget_rounds),
    epochs: Number(draft.epochs),
    batch_size: Number(draft.batch_size),
    learning_rate: Number(draft.learning_rate),
    configure_only: draft.configure_only,
  };
  if (draft.scenario !== "single") {
    body.members = parseMembers(draft.members);
    body.mode = draft.mode as Mode;
  }
  if (grants.length > 0) body.grants = grants;
  if (draft.epsilon.trim().length > 0) body.epsilon = Number(draft.epsilon);
  if (draft.eval_json.trim().length > 0) {
    const { evalSet } = parseEvalJson(
      draft.eval_json,
      Number(draft.feature_dim),
      Number(draft.num_classes),
    );
    if (evalSet !== null) {
      const wire = evalSetToWire(evalSet);
      body.eval_features = wire.eval_features;
      body.eval_labels = wire.eval_labels;
    }
  }
  return body;
}

/** The minimal grant set the drafted job needs, for the wizard's
 * grant-on-create shortcut. */
export function requiredGrantsForDraft(draft: JobDraft): Array<[string, string, Capability]> {
  return requiredGrants(
    draft.scenario,
    draft.scope_id.trim(),
    parseMembers(draft.members),
    draft.mode === "" ? null : draft.mode,
  );
}

/* Server 4xx details name the offending field in prose. The pairs below map
 * known phrasings back to wizard fields; anything unmatched surfaces on the
 * form-level banner instead. */
const DETAIL_FIELDS: Array<[RegExp, keyof JobDraft]> = [
  [/scenario/i, "scenario"],
  [/scope_id/i, "scope_id"],
  [/member|secondary app/i, "members"],
  [/sharing mode|data mode|mode or members|no mode/i, "mode"],
  [/rounds must/i, "rounds"],
  [/client_fraction/i, "client_fraction"],
  [/timeout/i, "timeout_s"],
  [/budget/i, "max_budget_rounds"],
  [/epochs and batch_size/i, "batch_size"],
  [/learning_rate/i, "learning_rate"],
  [/epsilon/i, "epsilon"],
  [/model dimensions/i, "feature_dim"],
];

export function fieldForServerDetail(detail: string): keyof JobDraft | null {
  for (const [pattern, field] of DETAIL_FIELDS) {
    if (pattern.test(detail)) return field;
  }
  return null;
}

export function isCapability(value: string): value is Capability {
  return (CAPABILITIES as readonly string[]).includes(value);
}
