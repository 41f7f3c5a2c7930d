// Client-side model of the running network, fed one record at a time.
// Holds no DOM references so it can be exercised headless.

import {
  allLinkKeys,
  parseLinkKey,
  type AckRecord,
  type ConstellationRecord,
  type HelloRecord,
  type LinkMetricsRecord,
  type SnapshotRecord,
  type TelemetryRecord,
} from "./protocol.js";

export type LinkStatus = "ok" | "degraded" | "down" | "stale";

// quality bands keyed off BER, the service's headline health number
export const BER_OK = 1e-5;
export const BER_DEGRADED = 1e-2;

// a card goes grey after this many missed telemetry periods
export const STALE_PERIODS = 3;

export const HISTORY_LEN = 60;

export interface LinkState {
  key: string;
  src: number;
  dst: number;
  metrics: LinkMetricsRecord | null;
  /** EVM % per period, most recent last; NaN where the stream sent null. */
  evmHistory: number[];
  /** SINR dB per period, most recent last. */
  sinrHistory: number[];
  /** Latest decimated constellation, at most 512 points. */
  points: [number, number][];
  lastSeenMs: number;
}

function emptyLink(key: string): LinkState {
  const parsed = parseLinkKey(key);
  if (!parsed) throw new Error(`bad link key ${key}`);
  return {
    key,
    src: parsed[0],
    dst: parsed[1],
    metrics: null,
    evmHistory: [],
    sinrHistory: [],
    points: [],
    lastSeenMs: 0,
  };
}

function pushBounded(history: number[], value: number): void {
  history.push(value);
  if (history.length > HISTORY_LEN) history.shift();
}

export class DashboardStore {
  hello: HelloRecord | null = null;
  readonly links = new Map<string, LinkState>();
  bandAssignment: number[] = [];
  aggregateLineRateBps = 0;
  aggregateThroughputBps = 0;
  quantumIndex = -1;
  snapshotCount = 0;
  lastSnapshotMs = 0;
  /** Wall interval between snapshots; assumed until two have arrived. */
  periodMs = 1000;
  readonly eventLog: string[] = [];
  readonly ackLog: AckRecord[] = [];

  constructor() {
    for (const key of allLinkKeys()) this.links.set(key, emptyLink(key));
  }

  ingest(record: TelemetryRecord, nowMs: number): void {
    switch (record.type) {
      case "hello":
        this.hello = record;
        this.aggregateLineRateBps = record.aggregate_line_rate_bps;
        this.bandAssignment = [...record.band_assignment];
        break;
      case "snapshot":
        this.ingestSnapshot(record, nowMs);
        break;
      case "constellation":
        this.ingestConstellation(record);
        break;
      case "event":
        this.pushEvent(record.event, record);
        break;
      case "ack":
        this.ackLog.push(record);
        if (this.ackLog.length > 50) this.ackLog.shift();
        break;
    }
  }

  private ingestSnapshot(rec: SnapshotRecord, nowMs: number): void {
    this.snapshotCount += 1;
    if (this.lastSnapshotMs > 0) {
      const dt = Math.max(1, nowMs - this.lastSnapshotMs);
      // first measurement replaces the guess, later ones are smoothed so a
      // single late delivery cannot flap every card to stale
      this.periodMs = this.snapshotCount === 2 ? dt : 0.7 * this.periodMs + 0.3 * dt;
    }
    this.lastSnapshotMs = nowMs;
    this.quantumIndex = rec.quantum_index;
    this.aggregateLineRateBps = rec.aggregate_line_rate_bps;
    this.aggregateThroughputBps = rec.aggregate_throughput_bps;
    this.bandAssignment = [...rec.band_assignment];
    for (const [key, metrics] of Object.entries(rec.links)) {
      const st = this.links.get(key);
      if (!st) continue;
      st.metrics = metrics;
      st.lastSeenMs = nowMs;
      pushBounded(st.evmHistory, metrics.evm_rms_pct ?? NaN);
      pushBounded(st.sinrHistory, metrics.sinr_db ?? NaN);
    }
  }

  private ingestConstellation(rec: ConstellationRecord): void {
    for (const [key, points] of Object.entries(rec.links)) {
      const st = this.links.get(key);
      if (st) st.points = points.slice(0, 512);
    }
  }

  private pushEvent(name: string, record: Record<string, unknown>): void {
    const extra = name === "telemetry_dropped" ? ` (${record.count})` : "";
    this.eventLog.push(`${name}${extra}`);
    if (this.eventLog.length > 50) this.eventLog.shift();
  }

  stale(key: string, nowMs: number): boolean {
    const st = this.links.get(key);
    if (!st || st.metrics === null) return true;
    return nowMs - st.lastSeenMs > STALE_PERIODS * this.periodMs;
  }

  status(key: string, nowMs: number): LinkStatus {
    if (this.stale(key, nowMs)) return "stale";
    const ber = this.links.get(key)!.metrics!.ber;
    if (ber < BER_OK) return "ok";
    if (ber < BER_DEGRADED) return "degraded";
    return "down";
  }

  /** Band index currently transmitted by a node, or null before hello. */
  bandOf(node: number): number | null {
    return this.bandAssignment.length === 4 ? this.bandAssignment[node] : null;
  }
}
