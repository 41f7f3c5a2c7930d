"""Scenario configuration, batch execution, sweeps, and result logging.

A scenario file is a JSON object; every field except ``seed`` has a
documented default. Batch runs write an append-only NDJSON snapshot log
plus a single summary record, both with sorted keys and no wall-clock
content, so identical scenarios produce byte-identical files.
"""

from __future__ import annotations

import dataclasses
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .channel import ChannelProfile
from .framing import DiversityMode, Modulation
from .mesh import (
    NUM_NODES,
    SNR_CONTROL_RANGE_DB,
    MeshNetwork,
    NetworkSnapshot,
    build_band_plan,
)
from .payload import SOURCES

# Reporting scale target: four bits per symbol at this rate is the
# 99.84 Mbps per-link line rate, 1198.08 Mbps over twelve links.
REAL_SYMBOL_RATE = 24.96e6
PROTOCOL_VERSION = 1

_PROFILES = tuple(p.name for p in ChannelProfile)
_MODULATIONS = tuple(m.name for m in Modulation)
_DIVERSITY = tuple(d.name for d in DiversityMode)


class ScenarioError(Exception):
    """Base class for scenario loading failures."""


class ScenarioFileError(ScenarioError):
    """Scenario file missing or unreadable."""


class ScenarioParseError(ScenarioError):
    """Scenario file is not valid JSON."""


class ScenarioValidationError(ScenarioError):
    """One or more fields failed validation; each error names its field."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class ScenarioConfig:
    """Everything a run needs; seed is mandatory, the rest has defaults."""

    seed: int
    symbol_rate: float = 1.0
    profile: str = "AWGN_ONLY"
    snr_db: float = 28.0
    snr_overrides: dict[tuple[int, int], float] = field(default_factory=dict)
    payload_bytes: int = 4992
    modulation: str = "QAM16"
    diversity: str = "ALAMOUTI"
    payload_source: str = "PRBS23"
    payload_source_kwargs: dict[str, Any] = field(default_factory=dict)
    duration_frames: int | None = 100  # frames per directed link
    duration_s: float | None = None  # simulated seconds (alternative)
    telemetry_period_s: float | None = None  # default: every 10 quanta
    real_rate_reporting: bool = False

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["snr_overrides"] = {
            f"{s}->{t}": v for (s, t), v in sorted(self.snr_overrides.items())
        }
        return d


def _parse_link_key(key: str) -> tuple[int, int] | None:
    parts = key.split("->")
    if len(parts) != 2:
        return None
    try:
        s, d = int(parts[0]), int(parts[1])
    except ValueError:
        return None
    if s == d or not (0 <= s < NUM_NODES and 0 <= d < NUM_NODES):
        return None
    return (s, d)


def scenario_from_dict(raw: dict[str, Any]) -> ScenarioConfig:
    """Validate a parsed scenario object; collect every field error."""
    if not isinstance(raw, dict):
        raise ScenarioValidationError(["scenario: must be a JSON object"])
    errors: list[str] = []
    known = {f.name for f in dataclasses.fields(ScenarioConfig)}
    for key in sorted(set(raw) - known):
        errors.append(f"{key}: unknown field")

    def number(name, default, lo=None, hi=None, integer=False):
        v = raw.get(name, default)
        if v is None and default is None:
            return None
        ok = isinstance(v, (int, float)) and not isinstance(v, bool)
        if integer:
            ok = isinstance(v, int) and not isinstance(v, bool)
        if not ok:
            errors.append(f"{name}: must be a number, got {v!r}")
            return default
        if lo is not None and v < lo or hi is not None and v > hi:
            errors.append(f"{name}: must be in [{lo}, {hi}], got {v!r}")
            return default
        return v

    def choice(name, default, options):
        v = raw.get(name, default)
        if v not in options:
            errors.append(f"{name}: must be one of {sorted(options)}, got {v!r}")
            return default
        return v

    if "seed" not in raw:
        errors.append("seed: required (runs never seed from the wall clock)")
    seed = number("seed", 0, lo=0, integer=True)
    symbol_rate = number("symbol_rate", 1.0)
    if isinstance(symbol_rate, (int, float)) and symbol_rate <= 0:
        errors.append(f"symbol_rate: must be positive, got {symbol_rate!r}")
    lo, hi = SNR_CONTROL_RANGE_DB
    snr_db = number("snr_db", 28.0, lo=lo, hi=hi)
    profile = choice("profile", "AWGN_ONLY", _PROFILES)
    modulation = choice("modulation", "QAM16", _MODULATIONS)
    diversity = choice("diversity", "ALAMOUTI", _DIVERSITY)
    payload_source = choice("payload_source", "PRBS23", tuple(SOURCES))
    payload_bytes = number("payload_bytes", 4992, lo=16, hi=65535, integer=True)

    overrides: dict[tuple[int, int], float] = {}
    raw_over = raw.get("snr_overrides", {})
    if not isinstance(raw_over, dict):
        errors.append("snr_overrides: must be an object of 'src->dst' keys")
    else:
        for key, v in sorted(raw_over.items()):
            pair = _parse_link_key(str(key))
            if pair is None:
                errors.append(f"snr_overrides.{key}: not a valid 'src->dst' link")
                continue
            if not isinstance(v, (int, float)) or not lo <= v <= hi:
                errors.append(f"snr_overrides.{key}: must be in [{lo}, {hi}]")
                continue
            overrides[pair] = float(v)

    kwargs = raw.get("payload_source_kwargs", {})
    if not isinstance(kwargs, dict):
        errors.append("payload_source_kwargs: must be an object")
        kwargs = {}
    if payload_source == "FILE" and "path" not in kwargs:
        errors.append("payload_source_kwargs.path: required for the FILE source")

    duration_frames = number("duration_frames", 100, lo=1, integer=True)
    duration_s = number("duration_s", None, lo=0.0)
    if "duration_s" in raw and raw.get("duration_s") is not None:
        if raw.get("duration_frames") is not None and "duration_frames" in raw:
            errors.append("duration_s: give either duration_frames or duration_s")
        else:
            duration_frames = None
        if isinstance(duration_s, (int, float)) and duration_s <= 0:
            errors.append(f"duration_s: must be positive, got {duration_s!r}")
    telemetry_period_s = number("telemetry_period_s", None, lo=0.0)
    real_rate = raw.get("real_rate_reporting", False)
    if not isinstance(real_rate, bool):
        errors.append(f"real_rate_reporting: must be a boolean, got {real_rate!r}")
        real_rate = False

    if errors:
        raise ScenarioValidationError(errors)
    return ScenarioConfig(
        seed=seed,
        symbol_rate=float(symbol_rate),
        profile=profile,
        snr_db=float(snr_db),
        snr_overrides=overrides,
        payload_bytes=payload_bytes,
        modulation=modulation,
        diversity=diversity,
        payload_source=payload_source,
        payload_source_kwargs=dict(kwargs),
        duration_frames=duration_frames,
        duration_s=duration_s,
        telemetry_period_s=telemetry_period_s,
        real_rate_reporting=real_rate,
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Load and validate a scenario file; failures are typed and specific."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ScenarioFileError(f"cannot read scenario {p}: {e}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(f"scenario {p} is not valid JSON: {e}") from e
    return scenario_from_dict(raw)


def serialize_scenario(cfg: ScenarioConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Building and driving a network from a scenario


def scenario_network(cfg: ScenarioConfig) -> MeshNetwork:
    return MeshNetwork(
        plan=build_band_plan(cfg.symbol_rate),
        profile=cfg.profile,
        snr_db=cfg.snr_db,
        seed=cfg.seed,
        payload_bytes=cfg.payload_bytes,
        modulation=Modulation[cfg.modulation],
        diversity=DiversityMode[cfg.diversity],
        payload_source=cfg.payload_source,
        payload_source_kwargs=cfg.payload_source_kwargs,
        snr_overrides=cfg.snr_overrides or None,
    )


def report_scale(cfg: ScenarioConfig) -> float:
    """Multiplier taking simulated rates to reported rates."""
    return REAL_SYMBOL_RATE / cfg.symbol_rate if cfg.real_rate_reporting else 1.0


def duration_quanta(cfg: ScenarioConfig, net: MeshNetwork) -> int:
    if cfg.duration_frames is not None:
        return 3 * cfg.duration_frames  # each node serves 3 links round-robin
    quantum_s = net.quantum_samples() / net.plan.composite_rate
    return max(1, math.ceil(cfg.duration_s / quantum_s))


def snapshot_every(cfg: ScenarioConfig, net: MeshNetwork) -> int:
    if cfg.telemetry_period_s is None:
        return 10
    quantum_s = net.quantum_samples() / net.plan.composite_rate
    return max(1, round(cfg.telemetry_period_s / quantum_s))


def _finite(x: float) -> float | None:
    return x if math.isfinite(x) else None


def link_record(m) -> dict[str, Any]:
    return {
        "evm_rms_pct": _finite(m.evm_rms_pct),
        "sinr_db": _finite(m.sinr_db),
        "ber": m.ber,
        "fer": m.fer,
        "frames_detected": m.frames_detected,
        "frames_crc_ok": m.frames_crc_ok,
        "payload_bits": m.payload_bits,
        "bit_errors": m.bit_errors,
    }


def snapshot_record(snap: NetworkSnapshot, scale: float = 1.0) -> dict[str, Any]:
    return {
        "type": "snapshot",
        "timestamp": snap.timestamp / scale,
        "quantum_index": snap.quantum_index,
        "links": {f"{s}->{d}": link_record(m) for (s, d), m in sorted(snap.links.items())},
        "aggregate_throughput_bps": snap.aggregate_throughput_bps * scale,
        "aggregate_line_rate_bps": snap.aggregate_line_rate_bps * scale,
        "band_assignment": list(snap.band_assignment),
    }


def summary_record(
    cfg: ScenarioConfig, net: MeshNetwork, n_quanta: int
) -> dict[str, Any]:
    scale = report_scale(cfg)
    snap = net.snapshot()
    sent = sum(1 for _ in net.sent_log)
    return {
        "type": "summary",
        "protocol": PROTOCOL_VERSION,
        "scenario": cfg.to_dict(),
        "quanta": n_quanta,
        "elapsed_s": snap.timestamp / scale,
        "links": {f"{s}->{d}": link_record(m) for (s, d), m in sorted(snap.links.items())},
        "frames_sent": sent,
        "frames_delivered": len(net.delivered),
        "aggregate_throughput_bps": snap.aggregate_throughput_bps * scale,
        "aggregate_line_rate_bps": snap.aggregate_line_rate_bps * scale,
        "per_link_line_rate_bps": net.line_rate_bps(0) * scale,
        "occupied_bw_hz": net.plan.occupied_bw * scale,
        "band_assignment": list(snap.band_assignment),
    }


def write_record(fh, record: dict[str, Any]) -> None:
    """One record per line, written atomically so logs survive crashes."""
    fh.write(json.dumps(record, sort_keys=True, allow_nan=False) + "\n")
    fh.flush()


def run_batch(
    cfg: ScenarioConfig, out_dir: str | Path, single_thread: bool = False
) -> dict[str, Any]:
    """Execute one scenario; write snapshots.ndjson and summary.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net = scenario_network(cfg)
    n_quanta = duration_quanta(cfg, net)
    every = snapshot_every(cfg, net)
    scale = report_scale(cfg)
    executor = None if single_thread else ThreadPoolExecutor(max_workers=4)
    try:
        with open(out / "snapshots.ndjson", "w") as log:
            try:
                for snap in net.run(n_quanta, snapshot_every=every, executor=executor):
                    write_record(log, snapshot_record(snap, scale))
            except Exception as e:
                write_record(log, {"type": "partial", "error": str(e)})
                raise
        summary = summary_record(cfg, net, n_quanta)
        with open(out / "summary.json", "w") as fh:
            write_record(fh, summary)
        return summary
    finally:
        if executor is not None:
            executor.shutdown()


# ---------------------------------------------------------------------------
# BER sweep

SWEEP_POINTS_DB = (8.0, 10.0, 12.0, 14.0, 16.0)


def sweep(
    cfg: ScenarioConfig,
    points_db: tuple[float, ...] = SWEEP_POINTS_DB,
    bits_per_point: int = 100_000,
    single_thread: bool = False,
) -> list[tuple[float, float, int]]:
    """BER at each operating SNR, bits pooled across all twelve links."""
    rows = []
    executor = None if single_thread else ThreadPoolExecutor(max_workers=4)
    try:
        for es in points_db:
            point = dataclasses.replace(cfg, snr_db=float(es))
            net = scenario_network(point)
            net.step_silent(executor)
            while net.counted_totals()[0] < bits_per_point:
                net.step_quantum(executor)
            net.step_silent(executor)
            bits, errors = net.counted_totals()
            rows.append((float(es), errors / bits if bits else 0.0, bits))
    finally:
        if executor is not None:
            executor.shutdown()
    return rows


def write_sweep_table(rows, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("es_n0_db ber bits\n")
        for es, ber, bits in rows:
            fh.write(f"{es:g} {ber:.8e} {bits}\n")
