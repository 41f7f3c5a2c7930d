// Network edge: the SSE subscription and the control POST. EventSource
// retries on its own schedule but gives no feedback or cap, so reconnection
// is managed by hand with the shared backoff schedule.

import { INITIAL_RETRY_MS, nextRetryMs, type ControlBody } from "./controls.js";
import { parseRecord, type AckRecord, type TelemetryRecord } from "./protocol.js";

export interface TelemetryCallbacks {
  onRecord(record: TelemetryRecord): void;
  onStatus(connected: boolean, note: string): void;
}

/** Subscribe to /events; returns a function that stops the subscription. */
export function connectTelemetry(baseUrl: string, cb: TelemetryCallbacks): () => void {
  let closed = false;
  let retryMs = INITIAL_RETRY_MS;
  let source: EventSource | null = null;

  const open = () => {
    if (closed) return;
    source = new EventSource(`${baseUrl}/events`);
    source.onopen = () => {
      retryMs = INITIAL_RETRY_MS;
      cb.onStatus(true, "");
    };
    source.onmessage = (ev) => {
      const record = parseRecord(ev.data);
      if (record) cb.onRecord(record);
    };
    source.onerror = () => {
      source?.close();
      if (closed) return;
      cb.onStatus(false, `retrying in ${(retryMs / 1000).toFixed(0)} s`);
      setTimeout(open, retryMs);
      retryMs = nextRetryMs(retryMs);
    };
  };

  open();
  return () => {
    closed = true;
    source?.close();
  };
}

/** POST one control; resolves with the ack (the bridge blocks until applied). */
export async function postControl(baseUrl: string, body: ControlBody): Promise<AckRecord> {
  const resp = await fetch(`${baseUrl}/control`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
  const text = (await resp.text()).trim();
  const record = parseRecord(text);
  if (!record || record.type !== "ack") {
    throw new Error(`malformed ack: ${text.slice(0, 120)}`);
  }
  return record;
}
