/** Typed client for the customer-facing half of the /api/v1 surface.
 *
 * One instance per (server, token) session. Concurrent reads of the same
 * URL share a single in-flight request; mutating POSTs are never deduplicated
 * (the UI serializes those by disabling their buttons), and DELETE is safe to
 * share because terminate is idempotent server-side.
 */

import type {
  JobConfigBody,
  JobSummary,
  MetricsResponse,
  PermissionOp,
  PermissionOpsResponse,
  SelectionResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`server returned ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private inflight = new Map<string, Promise<unknown>>();

  constructor(
    private readonly baseUrl: string,
    private readonly token: string,
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  createJob(body: JobConfigBody): Promise<JobSummary> {
    return this.request("POST", "/api/v1/jobs", body) as Promise<JobSummary>;
  }

  permissionOps(jobId: string, ops: PermissionOp[]): Promise<PermissionOpsResponse> {
    return this.request("POST", `/api/v1/jobs/${jobId}/permissions`, {
      ops,
    }) as Promise<PermissionOpsResponse>;
  }

  selection(jobId: string, round: number): Promise<SelectionResponse> {
    return this.deduped(
      "GET",
      `/api/v1/jobs/${jobId}/rounds/${round}/selection`,
    ) as Promise<SelectionResponse>;
  }

  metrics(jobId: string): Promise<MetricsResponse> {
    return this.deduped("GET", `/api/v1/jobs/${jobId}/metrics`) as Promise<MetricsResponse>;
  }

  async metricsCsv(jobId: string): Promise<string> {
    const response = await this.send("GET", `/api/v1/jobs/${jobId}/metrics?format=csv`);
    return response.text();
  }

  terminate(jobId: string): Promise<JobSummary> {
    return this.deduped("DELETE", `/api/v1/jobs/${jobId}`) as Promise<JobSummary>;
  }

  private deduped(method: string, path: string): Promise<unknown> {
    const key = `${method} ${path}`;
    const pending = this.inflight.get(key);
    if (pending !== undefined) return pending;
    const promise = this.request(method, path).finally(() => {
      this.inflight.delete(key);
    });
    this.inflight.set(key, promise);
    return promise;
  }

  private async request(method: string, path: string, body?: unknown): Promise<unknown> {
    const response = await this.send(method, path, body);
    return response.json();
  }

  private async send(method: string, path: string, body?: unknown): Promise<Response> {
    const init: RequestInit = {
      method,
      headers: { Authorization: `Bearer ${this.token}` },
    };
    if (body !== undefined) {
      init.headers = { ...init.headers, "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchFn(this.baseUrl + path, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const parsed = (await response.json()) as { detail?: unknown };
        if (typeof parsed.detail === "string") detail = parsed.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return response;
  }
}
