// Page wiring. Network records flow into the store, a coalesced repaint
// turns the store into HTML, and the control form posts through the bridge.
// The form lives in static markup and is never re-rendered, so its state
// survives telemetry updates.

import { connectTelemetry, postControl } from "./client.js";
import { drawConstellation, drawSparkline } from "./charts.js";
import { ControlTracker, type ControlBody } from "./controls.js";
import { NODES, type TelemetryRecord } from "./protocol.js";
import { DashboardStore } from "./store.js";
import { renderBanner, renderEventLog, renderGrid } from "./render.js";

function $<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
}

const store = new DashboardStore();
const tracker = new ControlTracker();
const baseUrl = new URLSearchParams(location.search).get("service") ?? "";

let connected = false;
let connectionNote = "connecting";
let repaintQueued = false;

function queueRepaint(): void {
  if (repaintQueued) return;
  repaintQueued = true;
  requestAnimationFrame(() => {
    repaintQueued = false;
    repaint();
  });
}

function repaint(): void {
  const now = Date.now();
  $("banner").innerHTML = renderBanner(store, connected, connectionNote);
  $("grid").innerHTML = renderGrid(store, now);
  $("events").innerHTML = renderEventLog(store.eventLog);
  paintCanvases();
  syncForm();
}

function paintCanvases(): void {
  for (const st of store.links.values()) {
    const spark = document.getElementById(`spark-${st.src}-${st.dst}`);
    if (spark instanceof HTMLCanvasElement) {
      const ctx = spark.getContext("2d");
      if (ctx) {
        ctx.clearRect(0, 0, spark.width, spark.height);
        drawSparkline(ctx, st.evmHistory, spark.width, spark.height, "#e8a33d");
        drawSparkline(ctx, st.sinrHistory, spark.width, spark.height, "#4fb5c9");
      }
    }
    const scatter = document.getElementById(`const-${st.src}-${st.dst}`);
    if (scatter instanceof HTMLCanvasElement) {
      const ctx = scatter.getContext("2d");
      if (ctx) {
        ctx.clearRect(0, 0, scatter.width, scatter.height);
        drawConstellation(ctx, st.points, scatter.width, scatter.height, "#9ecb76");
      }
    }
  }
}

function onRecord(record: TelemetryRecord): void {
  store.ingest(record, Date.now());
  queueRepaint();
}

// -- control form -----------------------------------------------------------

// which inputs each control type actually uses
const NEEDS_VALUE = new Set([
  "set_gain",
  "set_snr",
  "set_band",
  "set_modulation",
  "set_diversity",
  "set_payload_source",
]);
const NUMERIC_VALUE = new Set(["set_gain", "set_snr", "set_band"]);

function controlBody(commandId: string): ControlBody {
  const control = $<HTMLSelectElement>("ctl-type").value;
  const node = Number($<HTMLSelectElement>("ctl-node").value);
  const body: ControlBody = { type: "control", control, command_id: commandId };
  if (control === "swap_bands") {
    body.nodes = [node, Number($<HTMLSelectElement>("ctl-node-b").value)];
  } else {
    body.node = node;
    if (NEEDS_VALUE.has(control)) {
      const raw = $<HTMLInputElement>("ctl-value").value.trim();
      body.value = NUMERIC_VALUE.has(control) ? Number(raw) : raw;
    }
  }
  return body;
}

function syncForm(): void {
  const control = $<HTMLSelectElement>("ctl-type").value;
  $("ctl-value-wrap").classList.toggle("hidden", !NEEDS_VALUE.has(control));
  $("ctl-node-b-wrap").classList.toggle("hidden", control !== "swap_bands");
  const busy = tracker.busy();
  $<HTMLButtonElement>("ctl-send").disabled = busy || !connected;
  const result = tracker.lastResult;
  const el = $("ctl-result");
  if (busy) {
    el.className = "pending";
    el.textContent = "waiting for ack";
  } else if (result) {
    el.className = result.ok ? "ok" : "err";
    el.textContent = result.text;
  } else {
    el.className = "";
    el.textContent = "";
  }
}

async function submitControl(ev: Event): Promise<void> {
  ev.preventDefault();
  const commandId = tracker.begin(Date.now());
  if (commandId === null) return;
  syncForm();
  try {
    const ack = await postControl(baseUrl, controlBody(commandId));
    tracker.resolve(ack);
  } catch (e) {
    tracker.fail(e instanceof Error ? e.message : "request failed");
  }
  syncForm();
}

// -- boot --------------------------------------------------------------------

function boot(): void {
  const nodeOptions = NODES.map((n) => `<option value="${n}">node ${n}</option>`).join("");
  $<HTMLSelectElement>("ctl-node").innerHTML = nodeOptions;
  $<HTMLSelectElement>("ctl-node-b").innerHTML = nodeOptions;
  $<HTMLSelectElement>("ctl-node-b").value = "1";
  $("ctl-form").addEventListener("submit", submitControl);
  $("ctl-type").addEventListener("change", syncForm);

  connectTelemetry(baseUrl, {
    onRecord,
    onStatus(isUp, note) {
      connected = isUp;
      connectionNote = note;
      queueRepaint();
    },
  });

  // periodic sweep for staleness and ack timeouts, independent of telemetry
  setInterval(() => {
    if (tracker.expire(Date.now())) syncForm();
    queueRepaint();
  }, 500);

  repaint();
}

boot();
