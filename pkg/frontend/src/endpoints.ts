/** The server's documented endpoint table.
 *
 * The contract test replays every request shape the dashboard can issue and
 * rejects anything that does not match a row here, so adding a UI call site
 * that reaches outside the table breaks the build.
 */

export interface EndpointRow {
  method: "GET" | "POST" | "DELETE";
  /** Path template; {x} segments match any single concrete segment. */
  path: string;
  role: "customer" | "device" | "any";
  mutates: boolean;
}

export const ENDPOINT_TABLE: readonly EndpointRow[] = [
  { method: "POST", path: "/api/v1/jobs", role: "customer", mutates: true },
  { method: "POST", path: "/api/v1/jobs/{id}/permissions", role: "customer", mutates: true },
  { method: "GET", path: "/api/v1/jobs/{id}/rounds/{r}/selection", role: "any", mutates: false },
  { method: "POST", path: "/api/v1/jobs/{id}/rounds/{r}/updates", role: "device", mutates: true },
  { method: "GET", path: "/api/v1/jobs/{id}/model", role: "any", mutates: false },
  { method: "GET", path: "/api/v1/jobs/{id}/metrics", role: "customer", mutates: false },
  { method: "DELETE", path: "/api/v1/jobs/{id}", role: "customer", mutates: true },
];

function segmentsMatch(template: string, concrete: string): boolean {
  const want = template.split("/").filter((s) => s.length > 0);
  const got = concrete.split("/").filter((s) => s.length > 0);
  if (want.length !== got.length) return false;
  return want.every((seg, i) => {
    const actual = got[i];
    if (actual === undefined || actual.length === 0) return false;
    return seg.startsWith("{") ? true : seg === actual;
  });
}

/** Match a concrete request against the table; query strings are ignored. */
export function matchEndpoint(method: string, path: string): EndpointRow | null {
  const bare = path.split("?")[0] ?? path;
  for (const row of ENDPOINT_TABLE) {
    if (row.method === method && segmentsMatch(row.path, bare)) return row;
  }
  return null;
}
