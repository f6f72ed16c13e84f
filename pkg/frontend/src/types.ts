/** Wire shapes of the round server's /api/v1 responses.
 *
 * Everything the dashboard renders derives from these; the client keeps no
 * truth of its own beyond the session token and the list of job ids it has
 * touched.
 */

export const SCENARIOS = ["single", "joint", "new_problem"] as const;
export type Scenario = (typeof SCENARIOS)[number];

export const MODES = ["data", "gradient", "model"] as const;
export type Mode = (typeof MODES)[number];

export const CAPABILITIES = [
  "ShareData",
  "ShareGradient",
  "ShareModel",
  "ReadGlobalModel",
] as const;
export type Capability = (typeof CAPABILITIES)[number];

/** Capability a joint job's members must grant toward the group scope. */
export const MODE_CAPABILITY: Record<Mode, Capability> = {
  data: "ShareData",
  gradient: "ShareGradient",
  model: "ShareModel",
};

export type JobStatus = "configuring" | "running" | "completed" | "terminated";
export type RoundStatus = "Open" | "Aggregated" | "TimedOut" | "Cancelled";

export interface JobSummary {
  job_id: string;
  status: JobStatus;
  completed_reason: string | null;
  scenario: Scenario;
  scope_id: string;
  mode: Mode | null;
  rounds: number;
  effective_rounds: number;
  current_round: number;
  latest_model_round: number;
  seed: number;
}

export interface MetricRow {
  round: number;
  scope: string;
  seed: number;
  accuracy: number | null;
  n_updates: number;
  status: RoundStatus;
}

export interface MetricsResponse {
  job_id: string;
  status: JobStatus;
  completed_reason: string | null;
  current_round: number;
  rounds_planned: number;
  rows: MetricRow[];
}

export interface GrantRecord {
  source: string;
  target: string;
  capability: Capability;
  granted_at: number;
}

export interface RegistryView {
  apps: string[];
  groups: Record<string, string[]>;
  grants: GrantRecord[];
}

export interface SelectionResponse {
  job_id: string;
  round: number;
  selection: number[];
  status: RoundStatus;
  job_status: JobStatus;
  registry: RegistryView;
  train: {
    epochs: number;
    batch_size: number;
    learning_rate: number;
    seed: number;
  };
  scenario: Scenario;
  scope_id: string;
  mode: Mode | null;
  members: string[];
}

export interface PermissionOp {
  action: "grant" | "revoke";
  source: string;
  target: string;
  capability: Capability;
}

export interface PermissionOpsResponse {
  job_id: string;
  results: Array<PermissionOp & { applied: boolean }>;
  status: JobStatus;
}

/** POST /jobs body. Grants are (source, target, capability) triples. */
export interface JobConfigBody {
  scenario: Scenario;
  scope_id: string;
  feature_dim: number;
  num_classes: number;
  rounds: number;
  seed: number;
  members?: string[];
  mode?: Mode | null;
  client_fraction?: number;
  timeout_s?: number;
  max_budget_rounds?: number;
  epochs?: number;
  batch_size?: number;
  learning_rate?: number;
  grants?: Array<[string, string, Capability]>;
  eval_features?: { b64: string; shape: number[] };
  eval_labels?: { b64: string; shape: number[] };
  configure_only?: boolean;
  epsilon?: number | null;
}
