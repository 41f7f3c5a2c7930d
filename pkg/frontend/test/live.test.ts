// End-to-end drill against a live serve instance: real process, real SSE
// bridge, real control POST. Covers the three release checks for the
// console: 12 cards render and update, a gain change shows up in the
// metrics within 2 telemetry periods, and the banner reports the
// deployment-scale aggregate on a healthy scenario.

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, resolve } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { makeCommandId } from "../src/controls.js";
import { parseRecord, type AckRecord, type SnapshotRecord, type TelemetryRecord } from "../src/protocol.js";
import { DashboardStore } from "../src/store.js";
import { renderBanner, renderGrid } from "../src/render.js";

const REPO_ROOT = resolve(__dirname, "..", "..");
const PORT = 20000 + Math.floor(Math.random() * 20000);
const BASE = `http://127.0.0.1:${PORT + 1}`;

// healthy defaults apart from a small payload so quanta are cheap enough
// to stream several snapshots per second unpaced
const SCENARIO = {
  seed: 11,
  payload_bytes: 1024,
  duration_frames: 2000,
  telemetry_period_s: 1.0,
  real_rate_reporting: true,
};

let child: ChildProcess;
let abort: AbortController;
const inbox: TelemetryRecord[] = [];
const waiters: Array<() => void> = [];
let pumpError: Error | null = null;

function notify(): void {
  while (waiters.length) waiters.shift()!();
}

async function pumpSse(): Promise<void> {
  const resp = await fetch(`${BASE}/events`, { signal: abort.signal });
  const reader = resp.body!.getReader();
  const decoder = new TextDecoder();
  let buffer = "";
  for (;;) {
    const { done, value } = await reader.read();
    if (done) return;
    buffer += decoder.decode(value, { stream: true });
    let cut;
    while ((cut = buffer.indexOf("\n\n")) >= 0) {
      const frame = buffer.slice(0, cut);
      buffer = buffer.slice(cut + 2);
      for (const line of frame.split("\n")) {
        if (!line.startsWith("data: ")) continue;
        const record = parseRecord(line.slice(6));
        if (record) inbox.push(record);
      }
    }
    notify();
  }
}

/** Index of the first record at or past `from` that satisfies `pred`. */
async function waitFor(
  pred: (r: TelemetryRecord) => boolean,
  from: number,
  timeoutMs = 90_000,
): Promise<number> {
  const deadline = Date.now() + timeoutMs;
  let i = from;
  for (;;) {
    for (; i < inbox.length; i++) {
      if (pred(inbox[i])) return i;
    }
    if (pumpError) throw pumpError;
    if (Date.now() > deadline) throw new Error(`timed out waiting at record ${i}`);
    await new Promise<void>((resolveWait) => {
      waiters.push(resolveWait);
      setTimeout(resolveWait, 250);
    });
  }
}

const isSnapshot = (r: TelemetryRecord): r is SnapshotRecord => r.type === "snapshot";

async function serverUp(timeoutMs = 60_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      await fetch(`${BASE}/`, { signal: AbortSignal.timeout(1000) });
      return;
    } catch {
      if (Date.now() > deadline) throw new Error("serve bridge never came up");
      await new Promise((r) => setTimeout(r, 300));
    }
  }
}

beforeAll(async () => {
  const dir = mkdtempSync(join(tmpdir(), "console-drill-"));
  const scenarioPath = join(dir, "scenario.json");
  writeFileSync(scenarioPath, JSON.stringify(SCENARIO));
  child = spawn(
    "python3",
    [
      "-m",
      "meshradio.cli",
      "serve",
      "--scenario",
      scenarioPath,
      "--listen",
      `127.0.0.1:${PORT}`,
      "--pace",
      "0",
    ],
    {
      cwd: REPO_ROOT,
      env: { ...process.env, PYTHONPATH: join(REPO_ROOT, "src") },
      stdio: ["ignore", "ignore", "pipe"],
    },
  );
  let stderr = "";
  child.stderr!.on("data", (chunk) => (stderr += chunk));
  child.on("exit", (code) => {
    if (code !== 0 && code !== null) {
      pumpError = new Error(`serve exited with ${code}: ${stderr.slice(-2000)}`);
      notify();
    }
  });
  await serverUp();
  abort = new AbortController();
  pumpSse().catch((e) => {
    if (!abort.signal.aborted) {
      pumpError = e instanceof Error ? e : new Error(String(e));
      notify();
    }
  });
}, 90_000);

afterAll(() => {
  abort?.abort();
  child?.kill("SIGTERM");
});

describe("console drill against a live service", () => {
  const store = new DashboardStore();
  let cursor = 0;

  async function ingestThroughSnapshot(count: number): Promise<void> {
    for (let k = 0; k < count; k++) {
      cursor = (await waitFor(isSnapshot, cursor)) + 1;
    }
    for (const record of inbox.slice(0, cursor)) store.ingest(record, Date.now());
  }

  it(
    "renders 12 live cards that keep updating",
    async () => {
      await ingestThroughSnapshot(2);
      expect(store.hello).not.toBeNull();
      expect(store.snapshotCount).toBeGreaterThanOrEqual(2);

      const now = Date.now();
      const html = renderGrid(store, now);
      expect(html.match(/data-link="/g)).toHaveLength(12);
      expect(html).not.toContain("waiting for telemetry");
      // healthy scenario: every card carries real numbers and an ok chip
      expect(html.match(/chip-ok/g)).toHaveLength(12);

      const before = renderGrid(store, now);
      await ingestThroughSnapshot(1);
      expect(renderGrid(store, now)).not.toBe(before);
    },
    120_000,
  );

  it(
    "shows the deployment-scale aggregate in the banner",
    async () => {
      expect(store.aggregateLineRateBps).toBe(1_198_080_000);
      const banner = renderBanner(store, true, "");
      expect(banner).toContain("1198.08 Mbps");
    },
    30_000,
  );

  it(
    "round-trips a gain change into the metrics within 2 periods",
    async () => {
      const outbound = ["1->0", "1->2", "1->3"];
      const controlLink = "0->2";
      const baselineSnap = inbox
        .slice(0, cursor)
        .filter(isSnapshot)
        .at(-1)!;
      const sinrOf = (snap: SnapshotRecord, key: string) => snap.links[key].sinr_db!;

      const commandId = makeCommandId();
      const resp = await fetch(`${BASE}/control`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({
          type: "control",
          control: "set_gain",
          command_id: commandId,
          node: 1,
          value: 2.0,
        }),
      });
      const ack = parseRecord((await resp.text()).trim()) as AckRecord;
      expect(ack.type).toBe("ack");
      expect(ack.ok).toBe(true);
      expect(ack.command_id).toBe(commandId);
      expect(ack.winning_command_id).toBe(commandId);

      // the ack resolves once the gain is live; two more telemetry periods
      // must make the change visible on node 1's outbound links
      const ackAt = inbox.length;
      let idx = await waitFor(isSnapshot, ackAt);
      idx = await waitFor(isSnapshot, idx + 1);
      const second = inbox[idx] as SnapshotRecord;

      for (const key of outbound) {
        const delta = sinrOf(second, key) - sinrOf(baselineSnap, key);
        expect(delta).toBeGreaterThanOrEqual(0.5);
      }
      const controlDelta = Math.abs(
        sinrOf(second, controlLink) - sinrOf(baselineSnap, controlLink),
      );
      expect(controlDelta).toBeLessThanOrEqual(0.3);
    },
    120_000,
  );
});
