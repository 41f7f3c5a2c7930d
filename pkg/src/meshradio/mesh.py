"""Four-node mesh: band plan, per-node scheduling, and the network loop.

Each node owns one of four FDMA bands and transmits back-to-back frames
round-robin to the other three nodes. All twelve directed links run
continuously; reception is three parallel band-isolated chains per node.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Iterator

import numpy as np

from .channel import (
    ChannelProfile,
    ChannelRealization,
    make_noise_streams,
    make_realization,
    noise_power_for_snr,
    propagate,
)
from .dsp import SampleBlock
from .framing import DiversityMode, FrameDescriptor, Modulation, frame_geometry
from .modem import GUARD_SYMBOLS, LinkMetrics, LinkReceiver, TxConfig, tx_frame
from .payload import SOURCES, PayloadSource, make_source

# Normalized band centers in symbol-rate units. Spacing 1.875 leaves a
# 0.375 guard between 1.5-wide occupied bands; the outermost edge sits at
# 3.5625, inside the composite Nyquist of 4.
BAND_CENTER_UNITS = (-2.8125, -0.9375, 0.9375, 2.8125)
COMPOSITE_OVERSAMPLE = 8


@dataclass(frozen=True)
class BandPlan:
    """FDMA frequency plan shared by all four nodes."""

    symbol_rate: float = 1.0
    roll_off: float = 0.5
    samples_per_symbol: int = COMPOSITE_OVERSAMPLE

    @property
    def composite_rate(self) -> float:
        return self.samples_per_symbol * self.symbol_rate

    @property
    def band_centers(self) -> tuple[float, ...]:
        return tuple(u * self.symbol_rate for u in BAND_CENTER_UNITS)

    @property
    def occupied_bw(self) -> float:
        return (1.0 + self.roll_off) * self.symbol_rate

    @property
    def band_spacing(self) -> float:
        return (BAND_CENTER_UNITS[1] - BAND_CENTER_UNITS[0]) * self.symbol_rate

    @property
    def guard_band(self) -> float:
        return self.band_spacing - self.occupied_bw

    def center_normalized(self, band_index: int) -> float:
        """Band center in cycles per composite sample."""
        if not 0 <= band_index < len(BAND_CENTER_UNITS):
            raise ValueError(f"band_index must be 0..3, got {band_index}")
        return BAND_CENTER_UNITS[band_index] / self.samples_per_symbol

    def band_edges(self, band_index: int) -> tuple[float, float]:
        c = self.band_centers[band_index]
        return (c - self.occupied_bw / 2, c + self.occupied_bw / 2)


def build_band_plan(symbol_rate: float = 1.0) -> BandPlan:
    """Construct and sanity-check the four-band plan at a symbol rate."""
    if symbol_rate <= 0:
        raise ValueError(f"symbol_rate must be positive, got {symbol_rate}")
    plan = BandPlan(symbol_rate=symbol_rate)
    assert plan.guard_band > 0
    assert abs(plan.band_centers[-1]) + plan.occupied_bw / 2 < plan.composite_rate / 2
    return plan


# ---------------------------------------------------------------------------
# Nodes and controls

NUM_NODES = 4
GAIN_LIMIT = 8.0
SNR_CONTROL_RANGE_DB = (-20.0, 60.0)

CONTROL_TYPES = frozenset(
    {
        "set_gain",
        "set_modulation",
        "set_diversity",
        "set_snr",
        "set_band",
        "swap_bands",
        "set_payload_source",
        "pause",
        "resume",
    }
)


def _is_node_id(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and 0 <= v < NUM_NODES


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


@dataclass
class NodeState:
    """One node: its transmit side plus three band-isolated receive chains."""

    node_id: int
    tx_config: TxConfig
    payload_source: PayloadSource
    source_name: str
    seq_counters: dict[int, int]
    inbound: dict[int, LinkReceiver]
    destinations: tuple[int, ...]
    frames_sent: int = 0
    paused: bool = False


@dataclass(frozen=True)
class ControlCommand:
    """Operator command; fields beyond (type, command_id) depend on type."""

    type: str
    command_id: str
    node: int | None = None
    nodes: tuple[int, int] | None = None
    value: Any = None


@dataclass(frozen=True)
class CommandAck:
    command_id: str
    ok: bool
    reason: str | None = None


@dataclass(frozen=True)
class NetworkSnapshot:
    """Point-in-time view of all 12 directed links."""

    timestamp: float  # simulated seconds since the run began
    quantum_index: int
    links: dict[tuple[int, int], LinkMetrics]
    aggregate_throughput_bps: float  # delivered payload bits / elapsed time
    aggregate_line_rate_bps: float  # sum of per-link symbol-stream bit rates
    band_assignment: tuple[int, ...]


@dataclass
class _LinkAccount:
    """Mesh-side delivery accounting for frames addressed on one link."""

    sent: int = 0
    header_seen: int = 0
    delivered: int = 0
    delivered_bits: int = 0
    counted_bits: int = 0
    bit_errors: int = 0


class MeshNetwork:
    """The full four-node network driven in fixed block quanta.

    Every quantum each unpaused node transmits one frame at the quantum
    start; `propagate` superimposes all four waveforms at every other
    node's antennas, and each node's three receivers drain their bands.
    Controls are validated on arrival and applied at the next quantum
    boundary, so a frame already decided is never reconfigured mid-air.
    """

    def __init__(
        self,
        plan: BandPlan | None = None,
        *,
        profile: ChannelProfile | str = ChannelProfile.AWGN_ONLY,
        snr_db: float = 28.0,
        seed: int = 0,
        payload_bytes: int = 4992,
        modulation: Modulation = Modulation.QAM16,
        diversity: DiversityMode = DiversityMode.ALAMOUTI,
        payload_source: str = "PRBS23",
        payload_source_kwargs: dict[str, Any] | None = None,
        snr_overrides: dict[tuple[int, int], float] | None = None,
    ):
        self.plan = plan if plan is not None else build_band_plan()
        self.payload_bytes = payload_bytes
        self.seed = seed
        self.realization: ChannelRealization = make_realization(
            profile, snr_db, seed, nodes=NUM_NODES, snr_overrides=snr_overrides
        )
        self.noise_streams = make_noise_streams(seed, nodes=NUM_NODES)
        self.snr_db_by_node = {n: float(snr_db) for n in range(NUM_NODES)}

        kwargs = dict(payload_source_kwargs or {})
        self.nodes: list[NodeState] = []
        for n in range(NUM_NODES):
            others = tuple(sorted(set(range(NUM_NODES)) - {n}))
            cfg = TxConfig(
                band_index=n,
                modulation=modulation,
                diversity=diversity,
                samples_per_symbol=self.plan.samples_per_symbol,
            )
            geo = frame_geometry(payload_bytes, modulation)
            inbound = {
                src: LinkReceiver(
                    src, n, src, self.plan, expected_frame_symbols=geo.frame_symbols
                )
                for src in others
            }
            self.nodes.append(
                NodeState(
                    node_id=n,
                    tx_config=cfg,
                    payload_source=make_source(payload_source, **kwargs),
                    source_name=payload_source,
                    seq_counters={d: 0 for d in others},
                    inbound=inbound,
                    destinations=others,
                )
            )

        self._acct = {
            (s, d): _LinkAccount()
            for s in range(NUM_NODES)
            for d in range(NUM_NODES)
            if s != d
        }
        self.sent_log: dict[tuple[int, int, int], int] = {}  # (src,dst,seq) -> quantum
        self.delivered: set[tuple[int, int, int]] = set()
        self._staged: list[ControlCommand] = []
        self._future_bands = [node.tx_config.band_index for node in self.nodes]
        self._sample_pos = 0
        self._quantum_index = 0

    # -- geometry ----------------------------------------------------------

    def quantum_samples(self) -> int:
        """Samples per block quantum: the longest frame plus guard."""
        sym = max(
            frame_geometry(self.payload_bytes, node.tx_config.modulation).frame_symbols
            for node in self.nodes
        )
        return (sym + GUARD_SYMBOLS) * self.plan.samples_per_symbol

    @property
    def band_assignment(self) -> tuple[int, ...]:
        return tuple(node.tx_config.band_index for node in self.nodes)

    def constellation(self, src: int, dst: int) -> np.ndarray:
        return self.nodes[dst].inbound[src].last_constellation

    # -- controls ----------------------------------------------------------

    def apply_control(self, cmd: ControlCommand) -> CommandAck:
        """Validate now, queue for the next quantum boundary; one ack each."""
        reason = self._validate(cmd)
        if reason is not None:
            return CommandAck(cmd.command_id, ok=False, reason=reason)
        self._staged.append(cmd)
        if cmd.type == "swap_bands":
            a, b = cmd.nodes
            fb = self._future_bands
            fb[a], fb[b] = fb[b], fb[a]
        return CommandAck(cmd.command_id, ok=True)

    def _validate(self, cmd: ControlCommand) -> str | None:
        if cmd.type not in CONTROL_TYPES:
            return f"unknown command type {cmd.type!r}"
        if cmd.type == "swap_bands":
            if cmd.nodes is None or len(cmd.nodes) != 2:
                return "swap_bands needs a pair of node ids in 'nodes'"
            a, b = cmd.nodes
            for n in (a, b):
                if not _is_node_id(n):
                    return f"unknown node {n!r}"
            if a == b:
                return "swap_bands needs two distinct nodes"
            return None
        if not _is_node_id(cmd.node):
            return f"unknown node {cmd.node!r}"
        v = cmd.value
        if cmd.type == "set_gain":
            if not _is_number(v) or not 0 < v <= GAIN_LIMIT:
                return f"gain must be in (0, {GAIN_LIMIT}], got {v!r}"
        elif cmd.type == "set_modulation":
            if v not in Modulation.__members__:
                return f"unknown modulation {v!r}"
        elif cmd.type == "set_diversity":
            if v not in DiversityMode.__members__:
                return f"unknown diversity mode {v!r}"
        elif cmd.type == "set_snr":
            lo, hi = SNR_CONTROL_RANGE_DB
            if not _is_number(v) or not lo <= v <= hi:
                return f"snr_db must be in [{lo}, {hi}], got {v!r}"
        elif cmd.type == "set_band":
            if not _is_node_id(v):
                return f"band must be 0..{NUM_NODES - 1}, got {v!r}"
            if v != self._future_bands[cmd.node]:
                holder = self._future_bands.index(v)
                return f"band {v} is held by node {holder}; use swap_bands"
        elif cmd.type == "set_payload_source":
            name = v.get("name") if isinstance(v, dict) else v
            if name not in SOURCES:
                return f"unknown payload source {name!r}"
            if name == "FILE" and not (isinstance(v, dict) and v.get("path")):
                return "FILE source needs a 'path'"
        return None

    def _apply_staged(self) -> None:
        for cmd in self._staged:
            self._apply_now(cmd)
        self._staged.clear()

    def _apply_now(self, cmd: ControlCommand) -> None:
        node = self.nodes[cmd.node] if cmd.node is not None else None
        if cmd.type == "set_gain":
            node.tx_config.gain = float(cmd.value)
        elif cmd.type == "set_modulation":
            mod = Modulation[cmd.value]
            node.tx_config.modulation = mod
            geo = frame_geometry(self.payload_bytes, mod)
            for other in self.nodes:
                if other.node_id != node.node_id:
                    other.inbound[node.node_id].set_expected_frame(geo.frame_symbols)
        elif cmd.type == "set_diversity":
            node.tx_config.diversity = DiversityMode[cmd.value]
        elif cmd.type == "set_snr":
            snr = float(cmd.value)
            self.snr_db_by_node[cmd.node] = snr
            powers = dict(self.realization.noise_power)
            powers[cmd.node] = noise_power_for_snr(snr)
            self.realization = dataclasses.replace(
                self.realization, noise_power=powers
            )
        elif cmd.type == "swap_bands":
            a, b = cmd.nodes
            na, nb = self.nodes[a], self.nodes[b]
            na.tx_config.band_index, nb.tx_config.band_index = (
                nb.tx_config.band_index,
                na.tx_config.band_index,
            )
            for src in (a, b):
                band = self.nodes[src].tx_config.band_index
                for other in self.nodes:
                    if other.node_id != src:
                        other.inbound[src].retune(band)
        elif cmd.type == "set_band":
            pass  # validated equal to the current band: a no-op
        elif cmd.type == "set_payload_source":
            v = cmd.value
            name = v.get("name") if isinstance(v, dict) else v
            kwargs = {k: w for k, w in v.items() if k != "name"} if isinstance(v, dict) else {}
            node.payload_source = make_source(name, **kwargs)
            node.source_name = name
        elif cmd.type == "pause":
            node.paused = True
        elif cmd.type == "resume":
            node.paused = False

    # -- stepping ----------------------------------------------------------

    def _silent_pair(self, start: int, n: int) -> tuple[SampleBlock, SampleBlock]:
        rate = self.plan.composite_rate
        z = np.zeros(n, dtype=np.complex128)
        return (SampleBlock(z, rate, start), SampleBlock(z.copy(), rate, start))

    def _node_quantum(
        self, node: NodeState, start: int, n: int
    ) -> tuple[SampleBlock, SampleBlock]:
        if node.paused:
            return self._silent_pair(start, n)
        dst = node.destinations[node.frames_sent % len(node.destinations)]
        seq = node.seq_counters[dst]
        desc = FrameDescriptor(
            src=node.node_id,
            dst=dst,
            seq=seq,
            payload_bytes=self.payload_bytes,
            modulation=node.tx_config.modulation,
            diversity=node.tx_config.diversity,
            counted_payload=node.payload_source.counted,
        )
        payload = node.payload_source.payload_for(
            node.node_id, dst, seq, self.payload_bytes
        )
        b0, b1 = tx_frame(desc, payload, node.tx_config, self.plan, start)
        out0 = np.zeros(n, dtype=np.complex128)
        out1 = np.zeros(n, dtype=np.complex128)
        out0[: len(b0.samples)] = b0.samples
        out1[: len(b1.samples)] = b1.samples
        node.seq_counters[dst] = seq + 1
        node.frames_sent += 1
        self._acct[(node.node_id, dst)].sent += 1
        self.sent_log[(node.node_id, dst, seq)] = self._quantum_index
        rate = self.plan.composite_rate
        return (SampleBlock(out0, rate, start), SampleBlock(out1, rate, start))

    def step_quantum(self, executor=None) -> list[tuple[int, int, Any]]:
        """Advance one quantum with every unpaused node transmitting."""
        return self._step(transmit=True, executor=executor)

    def step_silent(self, executor=None) -> list[tuple[int, int, Any]]:
        """Advance one all-silent quantum (warm-up and flush)."""
        return self._step(transmit=False, executor=executor)

    def _step(self, transmit: bool, executor=None) -> list[tuple[int, int, Any]]:
        self._apply_staged()
        n = self.quantum_samples()
        start = self._sample_pos

        if transmit:
            if executor is None:
                tx = {
                    node.node_id: self._node_quantum(node, start, n)
                    for node in self.nodes
                }
            else:
                built = list(
                    executor.map(lambda nd: self._node_quantum(nd, start, n), self.nodes)
                )
                tx = {node.node_id: pair for node, pair in zip(self.nodes, built)}
        else:
            tx = {node.node_id: self._silent_pair(start, n) for node in self.nodes}

        rx = propagate(tx, self.realization, self.noise_streams)

        jobs = [
            (src, d) for d in range(NUM_NODES) for src in sorted(self.nodes[d].inbound)
        ]
        if executor is None:
            drained = [self.nodes[d].inbound[s].push_quantum(*rx[d]) for s, d in jobs]
        else:
            drained = list(
                executor.map(
                    lambda p: self.nodes[p[1]].inbound[p[0]].push_quantum(*rx[p[1]]),
                    jobs,
                )
            )

        events: list[tuple[int, int, Any]] = []
        for (s, d), evs in zip(jobs, drained):
            for ev in evs:
                events.append((s, d, ev))
                if not (ev.header_ok and ev.src == s and ev.dst == d):
                    continue  # overheard or corrupt: quality stats only
                acct = self._acct[(s, d)]
                acct.header_seen += 1
                acct.counted_bits += ev.payload_bits
                acct.bit_errors += ev.bit_errors
                if ev.crc_ok:
                    acct.delivered += 1
                    acct.delivered_bits += 8 * len(ev.payload)
                    self.delivered.add((s, d, ev.seq))

        self._sample_pos += n
        self._quantum_index += 1
        return events

    def run(
        self, n_quanta: int, snapshot_every: int = 0, executor=None
    ) -> Iterator[NetworkSnapshot]:
        """Drive n_quanta frame quanta; yields periodic and final snapshots.

        A silent warm-up quantum precedes the first frame (detectors need
        noise history) and a silent flush quantum follows the last (a
        detection can trail its frame into the next quantum).
        """
        if self._quantum_index == 0:
            self.step_silent(executor)
        for i in range(n_quanta):
            self.step_quantum(executor)
            if snapshot_every and (i + 1) % snapshot_every == 0:
                yield self.snapshot()
        self.step_silent(executor)
        yield self.snapshot()

    # -- metrics -----------------------------------------------------------

    def link_metrics(self, src: int, dst: int) -> LinkMetrics:
        rx = self.nodes[dst].inbound[src]
        a = self._acct[(src, dst)]
        return LinkMetrics(
            evm_rms_pct=rx.evm_rms_pct(),
            sinr_db=rx.stats.sinr_db(),
            ber=a.bit_errors / a.counted_bits if a.counted_bits else 0.0,
            fer=1.0 - a.delivered / a.sent if a.sent else 0.0,
            frames_detected=a.header_seen,
            frames_crc_ok=a.delivered,
            payload_bits=a.counted_bits,
            bit_errors=a.bit_errors,
        )

    def line_rate_bps(self, src: int) -> float:
        node = self.nodes[src]
        return node.tx_config.modulation.bits_per_symbol * self.plan.symbol_rate

    def counted_totals(self) -> tuple[int, int]:
        """Pooled counted payload bits and bit errors over all 12 links."""
        bits = sum(a.counted_bits for a in self._acct.values())
        errors = sum(a.bit_errors for a in self._acct.values())
        return bits, errors

    def snapshot(self) -> NetworkSnapshot:
        links = {
            (s, d): self.link_metrics(s, d)
            for s in range(NUM_NODES)
            for d in range(NUM_NODES)
            if s != d
        }
        elapsed = self._sample_pos / self.plan.composite_rate
        delivered = sum(a.delivered_bits for a in self._acct.values())
        return NetworkSnapshot(
            timestamp=elapsed,
            quantum_index=self._quantum_index,
            links=links,
            aggregate_throughput_bps=delivered / elapsed if elapsed else 0.0,
            aggregate_line_rate_bps=sum(
                self.line_rate_bps(s) for s, d in links
            ),
            band_assignment=self.band_assignment,
        )
