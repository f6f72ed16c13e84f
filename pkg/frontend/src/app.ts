/** DOM wiring for the dashboard. All decisions live in the imported modules;
 * this file only moves values between the page and those functions.
 *
 * Navigation model: one page, three sections (session, wizard, job view).
 * The job list is a session-local convenience cache of ids this browser
 * created or opened; the server's truth is always re-fetched per job.
 */

import { ApiClient, ApiError } from "./client.js";
import { csvMatchesRows } from "./csv.js";
import { buildGrid, cellsToOps, gridFromRegistry, requiredSatisfied, type GridCell } from "./grid.js";
import { Poller } from "./poll.js";
import { chartSvg } from "./series.js";
import { deriveView, type JobView } from "./state.js";
import type { Capability, MetricsResponse, Mode, Scenario } from "./types.js";
import {
  draftToBody,
  emptyDraft,
  fieldForServerDetail,
  parseMembers,
  requiredGrantsForDraft,
  validateDraft,
  type JobDraft,
} from "./validate.js";

interface JobCacheEntry {
  scenario: Scenario;
  scope_id: string;
  mode: Mode | null;
  members: string[];
  /** Last grid state the server confirmed applied, for configuring jobs. */
  saved_grants: Array<[string, string, Capability]>;
}

function $(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el;
}

function input(id: string): HTMLInputElement {
  return $(id) as HTMLInputElement;
}

class Dashboard {
  private client: ApiClient | null = null;
  private jobId: string | null = null;
  private poller: Poller<MetricsResponse> | null = null;
  private grid: GridCell[] = [];

  private cache(): Record<string, JobCacheEntry> {
    try {
      return JSON.parse(sessionStorage.getItem("flaas-jobs") ?? "{}");
    } catch {
      return {};
    }
  }

  private remember(jobId: string, entry: JobCacheEntry): void {
    const all = this.cache();
    all[jobId] = entry;
    sessionStorage.setItem("flaas-jobs", JSON.stringify(all));
  }

  connect(): void {
    const server = input("server").value.trim() || window.location.origin;
    const token = input("token").value.trim();
    if (token.length === 0) {
      $("session-error").textContent = "paste a customer token first";
      return;
    }
    $("session-error").textContent = "";
    this.client = new ApiClient(server, token);
    $("wizard-section").classList.remove("hidden");
    $("joblist-section").classList.remove("hidden");
    this.renderJobList();
  }

  private renderJobList(): void {
    const list = $("job-list");
    list.innerHTML = "";
    for (const id of Object.keys(this.cache()).sort()) {
      const button = document.createElement("button");
      button.type = "button";
      button.className = "chip";
      button.textContent = id;
      button.addEventListener("click", () => void this.openJob(id));
      list.appendChild(button);
    }
  }

  private readDraft(): JobDraft {
    const draft = emptyDraft();
    draft.scenario = (input("f-scenario").value as Scenario) ?? "joint";
    draft.scope_id = input("f-scope").value;
    draft.members = input("f-members").value;
    draft.mode = draft.scenario === "single" ? "" : (input("f-mode").value as Mode);
    draft.rounds = input("f-rounds").value;
    draft.client_fraction = input("f-fraction").value;
    draft.epochs = input("f-epochs").value;
    draft.batch_size = input("f-batch").value;
    draft.learning_rate = input("f-lr").value;
    draft.feature_dim = input("f-featdim").value;
    draft.num_classes = input("f-classes").value;
    draft.seed = input("f-seed").value;
    draft.timeout_s = input("f-timeout").value;
    draft.max_budget_rounds = input("f-budget").value;
    draft.epsilon = input("f-epsilon").value;
    draft.eval_json = ($("f-eval") as HTMLTextAreaElement).value;
    draft.configure_only = input("f-configure-only").checked;
    return draft;
  }

  private showFieldErrors(errors: Partial<Record<keyof JobDraft, string>>): void {
    for (const el of document.querySelectorAll<HTMLElement>("[data-err]")) {
      const field = el.dataset["err"] as keyof JobDraft;
      el.textContent = errors[field] ?? "";
    }
  }

  async createJob(): Promise<void> {
    if (this.client === null) return;
    const draft = this.readDraft();
    const errors = validateDraft(draft);
    this.showFieldErrors(errors);
    $("wizard-banner").textContent = "";
    if (Object.keys(errors).length > 0) return;

    const grantNow = input("f-grant-now").checked;
    const grants = grantNow ? requiredGrantsForDraft(draft) : [];
    if (grantNow) draft.configure_only = false;
    const submit = $("f-submit") as HTMLButtonElement;
    submit.disabled = true;
    try {
      const summary = await this.client.createJob(draftToBody(draft, grants));
      this.remember(summary.job_id, {
        scenario: summary.scenario,
        scope_id: summary.scope_id,
        mode: summary.mode,
        members: parseMembers(draft.members),
        saved_grants: grants,
      });
      this.renderJobList();
      await this.openJob(summary.job_id);
    } catch (error) {
      if (error instanceof ApiError) {
        const field = fieldForServerDetail(error.detail);
        if (field !== null) this.showFieldErrors({ [field]: error.detail });
        else $("wizard-banner").textContent = error.detail;
      } else {
        $("wizard-banner").textContent = String(error);
      }
    } finally {
      submit.disabled = false;
    }
  }

  async openJob(jobId: string): Promise<void> {
    if (this.client === null) return;
    this.poller?.stop();
    this.jobId = jobId;
    $("job-section").classList.remove("hidden");
    $("job-title").textContent = jobId;
    $("report").classList.add("hidden");
    ($("terminate") as HTMLButtonElement).disabled = false;

    this.poller = new Poller(
      () => this.client!.metrics(jobId),
      (state) => {
        $("stale-banner").classList.toggle("hidden", !state.stale);
        if (state.stale && state.lastError !== null) {
          $("stale-banner").textContent = `connection lost, showing last known state (${state.lastError})`;
        }
        if (state.value !== null) this.renderJob(deriveView(state.value), state.value);
      },
      2000,
    );
    this.poller.start();
  }

  private renderJob(view: JobView, metrics: MetricsResponse): void {
    $("job-status").textContent = view.statusLabel;
    $("job-budget").textContent = `${view.budgetRemaining} of ${view.roundsPlanned} rounds remaining`;
    $("chart-box").innerHTML = chartSvg(view.series, { roundsPlanned: view.roundsPlanned });
    this.renderRows(metrics);
    this.renderPermissionSection(view);
    if (view.finished) {
      this.poller?.stop();
      ($("terminate") as HTMLButtonElement).disabled = true;
      $("report").classList.remove("hidden");
    }
  }

  private renderRows(metrics: MetricsResponse): void {
    const body = $("rows-body");
    body.innerHTML = "";
    for (const row of metrics.rows.slice(-12).reverse()) {
      const tr = document.createElement("tr");
      if (row.status === "TimedOut") tr.className = "timedout";
      tr.innerHTML =
        `<td>${row.round}</td><td>${row.scope}</td>` +
        `<td>${row.accuracy === null ? "" : row.accuracy.toFixed(4)}</td>` +
        `<td>${row.n_updates}</td><td>${row.status}</td>`;
      body.appendChild(tr);
    }
  }

  private renderPermissionSection(view: JobView): void {
    const section = $("perm-section");
    const meta = this.jobId !== null ? this.cache()[this.jobId] : undefined;
    if (meta === undefined || meta.scenario === "single" || view.finished) {
      section.classList.add("hidden");
      return;
    }
    section.classList.remove("hidden");
    $("perm-hint").textContent = view.configuring
      ? "job is waiting for sharing grants; check the required cells and save"
      : "job is running; saved grants below reflect your last save";
    if (this.grid.length === 0) {
      this.grid = buildGrid(meta.scenario, meta.scope_id, meta.members, meta.mode,
        meta.saved_grants.map(([source, target, capability]) => ({ source, target, capability })));
      this.renderGrid();
    }
  }

  private renderGrid(): void {
    const box = $("perm-grid");
    box.innerHTML = "";
    const table = document.createElement("table");
    const pairs = [...new Set(this.grid.map((c) => `${c.source} → ${c.target}`))];
    const caps = [...new Set(this.grid.map((c) => c.capability))];
    table.innerHTML =
      `<thead><tr><th>source → target</th>${caps.map((c) => `<th>${c}</th>`).join("")}</tr></thead>`;
    const tbody = document.createElement("tbody");
    for (const pair of pairs) {
      const tr = document.createElement("tr");
      tr.innerHTML = `<td>${pair}</td>`;
      for (const cap of caps) {
        const cell = this.grid.find(
          (c) => `${c.source} → ${c.target}` === pair && c.capability === cap,
        )!;
        const td = document.createElement("td");
        const box = document.createElement("input");
        box.type = "checkbox";
        box.checked = cell.checked;
        if (cell.required) td.className = "required";
        box.addEventListener("change", () => {
          cell.checked = box.checked;
          $("perm-ready").textContent = requiredSatisfied(this.grid)
            ? "required grants all checked"
            : "required grants still missing";
        });
        td.appendChild(box);
        tr.appendChild(td);
      }
      tbody.appendChild(tr);
    }
    table.appendChild(tbody);
    box.appendChild(table);
  }

  async savePermissions(): Promise<void> {
    if (this.client === null || this.jobId === null) return;
    const button = $("perm-save") as HTMLButtonElement;
    button.disabled = true;
    $("perm-result").textContent = "";
    try {
      const response = await this.client.permissionOps(this.jobId, cellsToOps(this.grid));
      $("perm-result").textContent = `saved, job is ${response.status}`;
      const meta = this.cache()[this.jobId];
      if (meta !== undefined) {
        meta.saved_grants = this.grid
          .filter((c) => c.checked)
          .map((c) => [c.source, c.target, c.capability]);
        this.remember(this.jobId, meta);
      }
      void this.poller?.tick();
    } catch (error) {
      $("perm-result").textContent =
        error instanceof ApiError ? `nothing applied: ${error.detail}` : String(error);
    } finally {
      button.disabled = false;
    }
  }

  /** Running jobs only: re-read the authoritative grant mirror. */
  async refreshGrants(): Promise<void> {
    if (this.client === null || this.jobId === null) return;
    try {
      const metrics = await this.client.metrics(this.jobId);
      const selection = await this.client.selection(this.jobId, metrics.current_round);
      this.grid = gridFromRegistry(
        selection.scenario,
        selection.scope_id,
        selection.mode,
        selection.registry,
      );
      this.renderGrid();
      $("perm-result").textContent = "grid reloaded from the server registry";
    } catch (error) {
      $("perm-result").textContent =
        error instanceof ApiError ? error.detail : String(error);
    }
  }

  async terminate(): Promise<void> {
    if (this.client === null || this.jobId === null) return;
    if (!window.confirm(`Terminate ${this.jobId}? Closed rounds stay readable.`)) return;
    try {
      await this.client.terminate(this.jobId);
      await this.poller?.tick();
    } catch (error) {
      if (error instanceof ApiError && error.status === 404) {
        $("job-section").classList.add("hidden");
        this.renderJobList();
      }
    }
  }

  async downloadCsv(): Promise<void> {
    if (this.client === null || this.jobId === null) return;
    const [csv, metrics] = await Promise.all([
      this.client.metricsCsv(this.jobId),
      this.client.metrics(this.jobId),
    ]);
    const verdict = csvMatchesRows(csv, metrics.rows);
    $("csv-verdict").textContent = verdict.ok
      ? `csv matches the API rows (${metrics.rows.length} rows)`
      : `csv does not match: ${verdict.reason}`;
    const url = URL.createObjectURL(new Blob([csv], { type: "text/csv" }));
    const link = document.createElement("a");
    link.href = url;
    link.download = `${this.jobId}-metrics.csv`;
    link.click();
    URL.revokeObjectURL(url);
  }
}

const app = new Dashboard();

function wire(): void {
  $("connect").addEventListener("click", () => app.connect());
  $("f-submit").addEventListener("click", (e) => {
    e.preventDefault();
    void app.createJob();
  });
  $("f-scenario").addEventListener("change", () => {
    const single = input("f-scenario").value === "single";
    input("f-mode").disabled = single;
    input("f-members").disabled = single;
  });
  $("open-job").addEventListener("click", () => {
    const id = input("job-id-entry").value.trim();
    if (id.length > 0) void app.openJob(id);
  });
  $("perm-save").addEventListener("click", () => void app.savePermissions());
  $("perm-refresh").addEventListener("click", () => void app.refreshGrants());
  $("terminate").addEventListener("click", () => void app.terminate());
  $("download-csv").addEventListener("click", () => void app.downloadCsv());
}

document.addEventListener("DOMContentLoaded", wire);
