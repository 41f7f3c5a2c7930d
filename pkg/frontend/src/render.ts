// HTML builders for the console. All pure string functions: the page swaps
// innerHTML on each snapshot and then repaints the canvases, so everything
// here stays testable without a browser.

import {
  formatBer,
  formatDb,
  formatPct,
  formatRate,
  linkKey,
  NODES,
} from "./protocol.js";
import type { DashboardStore, LinkState, LinkStatus } from "./store.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

const STATUS_LABEL: Record<LinkStatus, string> = {
  ok: "ok",
  degraded: "degraded",
  down: "down",
  stale: "stale",
};

export function renderLinkCard(st: LinkState, status: LinkStatus): string {
  const m = st.metrics;
  const rows = m
    ? `<div class="row"><span>EVM</span><b>${formatPct(m.evm_rms_pct)}</b></div>
       <div class="row"><span>SINR</span><b>${formatDb(m.sinr_db)}</b></div>
       <div class="row"><span>BER</span><b>${formatBer(m.ber)}</b></div>
       <div class="row"><span>FER</span><b>${formatPct(100 * m.fer)}</b></div>
       <div class="row"><span>frames</span><b>${m.frames_crc_ok}/${m.frames_detected}</b></div>`
    : `<div class="row waiting">waiting for telemetry</div>`;
  return `<div class="card status-${status}" data-link="${st.key}">
    <div class="card-head">
      <span class="link-id">${st.src}&rarr;${st.dst}</span>
      <span class="chip chip-${status}">${STATUS_LABEL[status]}</span>
    </div>
    <div class="metrics">${rows}</div>
    <canvas class="spark" id="spark-${st.src}-${st.dst}" width="150" height="34"
      title="EVM and SINR, last 60 periods"></canvas>
    <canvas class="scatter" id="const-${st.src}-${st.dst}" width="84" height="84"
      title="post-equalizer constellation"></canvas>
  </div>`;
}

/** The 4x4 link matrix: row = transmitter, column = receiver, diagonal blank. */
export function renderGrid(store: DashboardStore, nowMs: number): string {
  const cells: string[] = [];
  for (const src of NODES) {
    for (const dst of NODES) {
      if (src === dst) {
        const band = store.bandOf(src);
        cells.push(
          `<div class="cell self">node ${src}${band === null ? "" : ` &middot; band ${band}`}</div>`,
        );
        continue;
      }
      const key = linkKey(src, dst);
      const st = store.links.get(key)!;
      cells.push(renderLinkCard(st, store.status(key, nowMs)));
    }
  }
  return cells.join("\n");
}

export function renderBanner(store: DashboardStore, connected: boolean, note: string): string {
  const agg = store.aggregateLineRateBps;
  const thr = store.aggregateThroughputBps;
  const conn = connected
    ? `<span class="conn live">live</span>`
    : `<span class="conn down">disconnected${note ? ` &middot; ${escapeHtml(note)}` : ""}</span>`;
  return `<span class="agg" id="aggregate">${agg > 0 ? formatRate(agg) : "--"}</span>
    <span class="agg-label">aggregate line rate</span>
    <span class="thr">${thr > 0 ? formatRate(thr) : "--"} delivered</span>
    <span class="qidx">${store.quantumIndex >= 0 ? `quantum ${store.quantumIndex}` : ""}</span>
    ${conn}`;
}

export function renderEventLog(events: readonly string[]): string {
  if (events.length === 0) return `<div class="ev none">no events</div>`;
  return events
    .slice(-8)
    .reverse()
    .map((e) => `<div class="ev">${escapeHtml(e)}</div>`)
    .join("");
}
