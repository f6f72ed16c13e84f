import { describe, expect, it } from "vitest";

import { ApiClient, type FetchLike } from "../src/client.js";
import { ENDPOINT_TABLE, matchEndpoint } from "../src/endpoints.js";

/** Replay every request shape the dashboard can issue and hold each one
 * against the documented endpoint table. A UI call site that reaches outside
 * the table fails here before it ever reaches a server. */

function capturingClient() {
  const calls: Array<{ method: string; path: string }> = [];
  const fetchFn: FetchLike = (url, init) => {
    calls.push({ method: init?.method ?? "GET", path: new URL(url).pathname + new URL(url).search });
    return Promise.resolve(new Response("{}", { status: 200 }));
  };
  return { calls, client: new ApiClient("http://srv", "t", fetchFn) };
}

async function replayAll() {
  const { calls, client } = capturingClient();
  await client.createJob({
    scenario: "joint",
    scope_id: "g",
    feature_dim: 4,
    num_classes: 3,
    rounds: 5,
    seed: 1,
    members: ["a", "b"],
    mode: "data",
    configure_only: true,
  });
  await client.permissionOps("job-0001", [
    { action: "grant", source: "a", target: "g", capability: "ShareData" },
  ]);
  await client.selection("job-0001", 1);
  await client.metrics("job-0001");
  await client.metricsCsv("job-0001");
  await client.terminate("job-0001");
  return calls;
}

describe("endpoint contract", () => {
  it("every dashboard request matches a documented endpoint row", async () => {
    const calls = await replayAll();
    expect(calls.length).toBeGreaterThanOrEqual(6);
    for (const call of calls) {
      const row = matchEndpoint(call.method, call.path);
      expect(row, `${call.method} ${call.path} is not in the endpoint table`).not.toBeNull();
    }
  });

  it("the customer surface touches no device-only endpoint", async () => {
    const calls = await replayAll();
    for (const call of calls) {
      expect(matchEndpoint(call.method, call.path)?.role).not.toBe("device");
    }
  });

  it("polling reads are non-mutating GETs", async () => {
    // the monitor's poll loop issues exactly this request
    const { calls, client } = capturingClient();
    await client.metrics("job-0001");
    const row = matchEndpoint(calls[0]!.method, calls[0]!.path);
    expect(calls[0]?.method).toBe("GET");
    expect(row?.mutates).toBe(false);
  });

  it("the table itself stays in sync with the documented surface", () => {
    expect(ENDPOINT_TABLE).toHaveLength(7);
    expect(matchEndpoint("POST", "/api/v1/jobs")?.role).toBe("customer");
    expect(matchEndpoint("POST", "/api/v1/jobs/job-3/rounds/2/updates")?.role).toBe("device");
    expect(matchEndpoint("GET", "/api/v1/jobs/job-3/model?scope=g&round=0")?.role).toBe("any");
    expect(matchEndpoint("DELETE", "/api/v1/jobs/job-3")?.mutates).toBe(true);
    expect(matchEndpoint("GET", "/api/v1/jobs")).toBeNull();
    expect(matchEndpoint("POST", "/api/v1/jobs/job-3/rounds/updates")).toBeNull();
  });
});
