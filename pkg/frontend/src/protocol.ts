// Wire records emitted by the telemetry service. The raw socket sends one
// JSON object per line; the HTTP bridge mirrors the same objects as SSE
// `data:` frames. Field names here match the serve side exactly.

export interface LinkMetricsRecord {
  evm_rms_pct: number | null;
  sinr_db: number | null;
  ber: number;
  fer: number;
  frames_detected: number;
  frames_crc_ok: number;
  payload_bits: number;
  bit_errors: number;
}

export interface HelloRecord {
  type: "hello";
  protocol: number;
  scenario: Record<string, unknown>;
  telemetry_every_quanta: number;
  quantum_s: number;
  aggregate_line_rate_bps: number;
  per_link_line_rate_bps: number;
  band_assignment: number[];
}

export interface SnapshotRecord {
  type: "snapshot";
  timestamp: number;
  quantum_index: number;
  links: Record<string, LinkMetricsRecord>;
  aggregate_throughput_bps: number;
  aggregate_line_rate_bps: number;
  band_assignment: number[];
}

export interface ConstellationRecord {
  type: "constellation";
  timestamp: number;
  links: Record<string, [number, number][]>;
}

export interface EventRecord {
  type: "event";
  event: string;
  [key: string]: unknown;
}

export interface AckRecord {
  type: "ack";
  command_id: string | null;
  ok: boolean;
  reason?: string;
  winning_command_id?: string;
}

export type TelemetryRecord =
  | HelloRecord
  | SnapshotRecord
  | ConstellationRecord
  | EventRecord
  | AckRecord;

const RECORD_TYPES = new Set(["hello", "snapshot", "constellation", "event", "ack"]);

/** Parse one wire line; anything unrecognizable becomes null, never a throw. */
export function parseRecord(line: string): TelemetryRecord | null {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch {
    return null;
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) return null;
  const type = (raw as { type?: unknown }).type;
  if (typeof type !== "string" || !RECORD_TYPES.has(type)) return null;
  return raw as TelemetryRecord;
}

export const NODES = [0, 1, 2, 3] as const;

export function linkKey(src: number, dst: number): string {
  return `${src}->${dst}`;
}

export function parseLinkKey(key: string): [number, number] | null {
  const m = /^([0-3])->([0-3])$/.exec(key);
  if (!m) return null;
  const src = Number(m[1]);
  const dst = Number(m[2]);
  return src === dst ? null : [src, dst];
}

/** The 12 directed link keys, row-major by (src, dst). */
export function allLinkKeys(): string[] {
  const keys: string[] = [];
  for (const s of NODES) {
    for (const d of NODES) {
      if (s !== d) keys.push(linkKey(s, d));
    }
  }
  return keys;
}

// rates on this network live naturally in Mbps, so stay there instead of
// rolling over to Gbps
export function formatRate(bps: number): string {
  if (!Number.isFinite(bps)) return "?";
  if (bps >= 1e6) return `${(bps / 1e6).toFixed(2)} Mbps`;
  if (bps >= 1e3) return `${(bps / 1e3).toFixed(2)} kbps`;
  return `${bps.toFixed(2)} bps`;
}

export function formatBer(ber: number): string {
  if (!Number.isFinite(ber)) return "?";
  if (ber === 0) return "0";
  return ber.toExponential(2);
}

export function formatDb(x: number | null): string {
  return x === null || !Number.isFinite(x) ? "--" : `${x.toFixed(1)} dB`;
}

export function formatPct(x: number | null): string {
  return x === null || !Number.isFinite(x) ? "--" : `${x.toFixed(1)}%`;
}
