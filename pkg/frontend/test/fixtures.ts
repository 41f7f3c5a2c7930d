// Builders for wire-shaped records, mirroring what serve emits.

import type {
  HelloRecord,
  LinkMetricsRecord,
  SnapshotRecord,
} from "../src/protocol.js";
import { allLinkKeys } from "../src/protocol.js";

export function metrics(over: Partial<LinkMetricsRecord> = {}): LinkMetricsRecord {
  return {
    evm_rms_pct: 4.2,
    sinr_db: 27.9,
    ber: 0,
    fer: 0,
    frames_detected: 10,
    frames_crc_ok: 10,
    payload_bits: 81920,
    bit_errors: 0,
    ...over,
  };
}

export function hello(over: Partial<HelloRecord> = {}): HelloRecord {
  return {
    type: "hello",
    protocol: 1,
    scenario: { seed: 1 },
    telemetry_every_quanta: 1,
    quantum_s: 2888,
    aggregate_line_rate_bps: 1_198_080_000,
    per_link_line_rate_bps: 99_840_000,
    band_assignment: [0, 1, 2, 3],
    ...over,
  };
}

export function snapshot(
  quantum: number,
  perLink: Partial<LinkMetricsRecord> | ((key: string) => Partial<LinkMetricsRecord>) = {},
): SnapshotRecord {
  const links: Record<string, LinkMetricsRecord> = {};
  for (const key of allLinkKeys()) {
    links[key] = metrics(typeof perLink === "function" ? perLink(key) : perLink);
  }
  return {
    type: "snapshot",
    timestamp: quantum * 2888,
    quantum_index: quantum,
    links,
    aggregate_throughput_bps: 1_080_264_000,
    aggregate_line_rate_bps: 1_198_080_000,
    band_assignment: [0, 1, 2, 3],
  };
}
