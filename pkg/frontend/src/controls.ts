// Control-submission state machine. One command in flight at a time: the
// form stays disabled until its ack lands or the timeout passes, and a nack
// leaves the inputs untouched so the operator can correct and resend.

import type { AckRecord } from "./protocol.js";

export const ACK_TIMEOUT_MS = 2000;

export interface ControlBody {
  type: "control";
  control: string;
  command_id: string;
  node?: number;
  nodes?: [number, number];
  value?: unknown;
}

export interface ControlResult {
  ok: boolean;
  text: string;
  /** True when the entry resolved by timing out rather than by an ack. */
  timedOut?: boolean;
}

let counter = 0;

export function makeCommandId(): string {
  counter += 1;
  return `ui-${Date.now().toString(36)}-${counter}`;
}

export class ControlTracker {
  private pending: { commandId: string; sentAtMs: number } | null = null;
  lastResult: ControlResult | null = null;

  busy(): boolean {
    return this.pending !== null;
  }

  /** Claim the in-flight slot; null when a command is already pending. */
  begin(nowMs: number): string | null {
    if (this.pending) return null;
    const commandId = makeCommandId();
    this.pending = { commandId, sentAtMs: nowMs };
    return commandId;
  }

  /** Feed an ack back in. Late acks (after expiry) still update the display. */
  resolve(ack: AckRecord): boolean {
    const matched = this.pending !== null && ack.command_id === this.pending.commandId;
    if (matched) this.pending = null;
    if (matched || ack.command_id !== null) {
      this.lastResult = ack.ok
        ? {
            ok: true,
            text:
              ack.winning_command_id && ack.winning_command_id !== ack.command_id
                ? `applied (superseded by ${ack.winning_command_id})`
                : "applied",
          }
        : { ok: false, text: ack.reason ?? "rejected" };
    }
    return matched;
  }

  /** Drop a pending entry older than the timeout; true when that happened. */
  expire(nowMs: number): boolean {
    if (!this.pending || nowMs - this.pending.sentAtMs < ACK_TIMEOUT_MS) return false;
    this.pending = null;
    this.lastResult = { ok: false, text: "no ack within 2 s", timedOut: true };
    return true;
  }

  /** Network failure on the request itself, counts as a resolution. */
  fail(message: string): void {
    this.pending = null;
    this.lastResult = { ok: false, text: message };
  }
}

/** Reconnect backoff schedule: doubling, capped. */
export function nextRetryMs(current: number): number {
  return Math.min(current * 2, 10_000);
}

export const INITIAL_RETRY_MS = 1000;
