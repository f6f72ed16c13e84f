/** Minimal device fleet for end-to-end tests, speaking only the documented
 * device endpoints: read the round's selection, fetch the current model, and
 * upload it as the round's trained result.
 *
 * Re-uploading the downloaded model keeps the test free of any training
 * logic while still exercising real selection, upload validation, and
 * aggregation (the weighted average of identical models is that model).
 */

import { deviceToken } from "./server.js";

async function getJson(url: string, token: string): Promise<Record<string, unknown>> {
  const response = await fetch(url, { headers: { Authorization: `Bearer ${token}` } });
  if (!response.ok) {
    throw new Error(`${url} -> ${response.status}: ${await response.text()}`);
  }
  return (await response.json()) as Record<string, unknown>;
}

export async function driveRound(
  baseUrl: string,
  jobId: string,
  round: number,
  scope: string,
): Promise<string> {
  const anyToken = deviceToken(0);
  const selection = (await getJson(
    `${baseUrl}/api/v1/jobs/${jobId}/rounds/${round}/selection`,
    anyToken,
  )) as { selection: number[] };

  const model = (await getJson(
    `${baseUrl}/api/v1/jobs/${jobId}/model?scope=${encodeURIComponent(scope)}`,
    anyToken,
  )) as { payload_b64: string };

  let status = "Open";
  for (const deviceId of selection.selection) {
    const response = await fetch(`${baseUrl}/api/v1/jobs/${jobId}/rounds/${round}/updates`, {
      method: "POST",
      headers: {
        Authorization: `Bearer ${deviceToken(deviceId)}`,
        "Content-Type": "application/json",
      },
      body: JSON.stringify({
        device_id: deviceId,
        round,
        entries: [
          { scope, n: 10 + deviceId, payload_b64: model.payload_b64, compressed: false },
        ],
      }),
    });
    if (!response.ok) {
      throw new Error(`update for device ${deviceId} -> ${response.status}: ${await response.text()}`);
    }
    status = ((await response.json()) as { status: string }).status;
  }
  return status;
}
