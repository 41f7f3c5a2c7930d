"""Transmit and receive chains for one link.

TX: frame symbols per antenna, 8x upsampling, 65-tap root-raised-cosine
shaping, gain, numeric upconversion to the assigned band. RX: band
isolation and matched filtering, preamble correlation with an adaptive
threshold, timing refinement, training-based channel estimation with
dominant-tap normalization, diversity combining, pilot phase tracking,
normalized-LMS equalization, demapping, and gated power metrics.

All streaming state is explicit; absolute sample indices flow through
`SampleBlock.start_index` so processing is invariant to block boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy.signal import fftconvolve

from .dsp import SampleBlock, design_kaiser_lowpass, design_srrc, golay_pair, nco_mix
from .framing import (
    PILOT_SYMBOL,
    PREAMBLE_CHIPS,
    DiversityMode,
    FrameDescriptor,
    FrameGeometry,
    FrameLayout,
    HeaderInfo,
    Modulation,
    bits_to_bytes,
    body_bits,
    build_preamble,
    check_body,
    decode_header,
    encode_header,
    frame_geometry,
    payload_bits,
    training_sequences,
)
from .payload import counted_payload

SAMPLES_PER_SYMBOL = 8
SRRC_ROLL_OFF = 0.5
SRRC_SPAN_SYMBOLS = 8  # 65 taps at 8 samples/symbol
TX_FILTER_DELAY = 32  # samples, (65-1)/2
RX_FILTER_DELAY = 80  # samples, (161-1)/2 through the band-isolation chain
CHAIN_DELAY = TX_FILTER_DELAY + RX_FILTER_DELAY

# Inter-frame guard: idle symbols between back-to-back frames of one node.
# Gives the noise-floor gate a signal-free window and absorbs filter tails.
GUARD_SYMBOLS = 64

DETECT_ALPHA = 8.0
NOISE_WINDOW = 4096  # trailing metric samples averaged into the floor
NOISE_GAP = 4096  # lag between the floor window and the current sample
MIN_FLOOR_FILL = 256
PEAK_SEARCH = 4608  # samples searched after a threshold crossing
LOCKOUT_MARGIN = 256  # reopen slightly before the next frame is due

# Gated power measurement, in symbols relative to the frame.
ON_GATE_START_SYMBOL = PREAMBLE_CHIPS  # training + header + body interval
OFF_GATE_START_SYMBOL = 20  # past frame end, clear of filter tails
OFF_GATE_END_SYMBOL = 44
POWER_FLOOR = 1e-12

DEGENERATE_TAP_FLOOR = 1e-6

_SQRT1_2 = 1.0 / np.sqrt(2.0)
_QAM16_SCALE = 1.0 / np.sqrt(10.0)
# Gray axis levels indexed by (b_high, b_low): 00 -> -3, 01 -> -1, 11 -> +1,
# 10 -> +3, so adjacent amplitudes differ in one bit.
_GRAY_LEVELS = np.array([-3.0, -1.0, 3.0, 1.0]) * _QAM16_SCALE


class DegenerateChannelError(ValueError):
    """All channel taps below the usable floor; the frame is dropped."""


# ---------------------------------------------------------------------------
# Symbol mapping


def map_qpsk_gray(bits: np.ndarray) -> np.ndarray:
    """Bit pairs to unit-power QPSK: bit 0 selects the positive axis."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size % 2:
        raise ValueError("QPSK needs a bit count divisible by 2")
    i = 1.0 - 2.0 * bits[0::2]
    q = 1.0 - 2.0 * bits[1::2]
    return (i + 1j * q) * _SQRT1_2


def demap_qpsk_gray(symbols: np.ndarray) -> np.ndarray:
    """Sign slicing; the I=0 / Q=0 boundary resolves to bit 0."""
    symbols = np.asarray(symbols)
    out = np.empty(2 * symbols.size, dtype=np.uint8)
    out[0::2] = symbols.real < 0
    out[1::2] = symbols.imag < 0
    return out


def map_qam16_gray(bits: np.ndarray) -> np.ndarray:
    """4-bit groups (b3 b2 b1 b0): b3 b2 Gray-select I, b1 b0 select Q."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size % 4:
        raise ValueError("16-QAM needs a bit count divisible by 4")
    i = _GRAY_LEVELS[2 * bits[0::4] + bits[1::4]]
    q = _GRAY_LEVELS[2 * bits[2::4] + bits[3::4]]
    return i + 1j * q


def demap_qam16_gray(symbols: np.ndarray) -> np.ndarray:
    """Minimum-distance slicing per axis.

    Decision boundaries resolve toward the numerically lower Gray label:
    at 0 the inner negative point (01) wins, at -2/sqrt(10) the outer
    (00), at +2/sqrt(10) the outer (10).
    """
    symbols = np.asarray(symbols)
    edge = 2.0 * _QAM16_SCALE
    out = np.empty(4 * symbols.size, dtype=np.uint8)
    for off, axis in ((0, symbols.real), (2, symbols.imag)):
        out[off::4] = axis > 0
        out[off + 1 :: 4] = (axis > -edge) & (axis < edge)
    return out


def map_symbols(bits: np.ndarray, modulation: Modulation) -> np.ndarray:
    if modulation == Modulation.QPSK:
        return map_qpsk_gray(bits)
    return map_qam16_gray(bits)


def demap_symbols(symbols: np.ndarray, modulation: Modulation) -> np.ndarray:
    if modulation == Modulation.QPSK:
        return demap_qpsk_gray(symbols)
    return demap_qam16_gray(symbols)


# ---------------------------------------------------------------------------
# Domain types


@dataclass
class TxConfig:
    """Per-node transmit settings."""

    band_index: int
    gain: float = 1.0
    modulation: Modulation = Modulation.QAM16
    diversity: DiversityMode = DiversityMode.ALAMOUTI
    samples_per_symbol: int = SAMPLES_PER_SYMBOL

    def __post_init__(self):
        if self.gain <= 0:
            raise ValueError(f"gain must be positive, got {self.gain}")
        if not 0 <= self.band_index <= 3:
            raise ValueError(f"band_index must be 0..3, got {self.band_index}")


@dataclass(frozen=True)
class ChannelEstimate:
    """2x2 estimate, h[i][j] = TX antenna j to RX antenna i, scaled so the
    strongest entry has unit magnitude."""

    h: np.ndarray
    dominant_tap_mag: float
    timestamp: int

    @property
    def h_raw(self) -> np.ndarray:
        return self.h * self.dominant_tap_mag


@dataclass
class LinkMetrics:
    """Cumulative quality numbers for one directed link."""

    evm_rms_pct: float = 0.0
    sinr_db: float = float("nan")
    ber: float = 0.0
    fer: float = 0.0
    frames_detected: int = 0
    frames_crc_ok: int = 0
    payload_bits: int = 0
    bit_errors: int = 0


@dataclass(frozen=True)
class DetectionResult:
    """One preamble detection at the band-isolated stream."""

    sample_index: int  # estimated frame start in the underlying stream
    metric: float
    threshold_at_detection: float
    timing_phase: int


@dataclass(frozen=True)
class FrameEvent:
    """Outcome of one detected frame after the full receive chain."""

    src: int
    dst: int
    seq: int
    header_ok: bool
    crc_ok: bool
    payload: bytes | None
    payload_bits: int
    bit_errors: int
    evm_pre_pct: float
    evm_post_pct: float
    sinr_db: float | None
    detection: DetectionResult


# ---------------------------------------------------------------------------
# Transmit chain


@lru_cache(maxsize=None)
def _tx_srrc_taps() -> np.ndarray:
    return design_srrc(SRRC_ROLL_OFF, SRRC_SPAN_SYMBOLS, SAMPLES_PER_SYMBOL).taps


def frame_symbol_streams(
    desc: FrameDescriptor, payload: bytes
) -> tuple[np.ndarray, np.ndarray, np.ndarray, FrameGeometry]:
    """Per-antenna symbol streams plus the pre-coding body reference.

    Preamble, training_a, and the header ride antenna 0; training_b rides
    antenna 1 (silent in single-TX mode). The body is either antenna-0
    only or space-time coded in pairs: antenna 0 sends (s1, -conj(s2)),
    antenna 1 (s2, conj(s1)). In the dual-antenna mode every output is
    scaled by 1/sqrt(2) so total radiated power matches single-TX.
    """
    if len(payload) != desc.payload_bytes:
        raise ValueError(
            f"payload is {len(payload)} bytes, descriptor says {desc.payload_bytes}"
        )
    geo = frame_geometry(desc.payload_bytes, desc.modulation)
    layout = FrameLayout()

    data_syms = map_symbols(body_bits(payload), desc.modulation)
    body = np.empty(geo.body_symbols, dtype=np.complex128)
    body[geo.payload_positions] = data_syms[: geo.n_payload_symbols]
    body[geo.crc_positions] = data_syms[geo.n_payload_symbols :]
    body[geo.pilot_positions] = PILOT_SYMBOL

    header_syms = map_qpsk_gray(payload_bits(encode_header(desc)))
    ta, tb = training_sequences()

    ant0 = np.zeros(geo.frame_symbols, dtype=np.complex128)
    ant1 = np.zeros(geo.frame_symbols, dtype=np.complex128)
    ant0[: layout.preamble_chips] = build_preamble()
    ant0[layout.training_a_slice()] = ta
    ant0[layout.header_slice()] = header_syms

    off = layout.body_offset
    if desc.diversity == DiversityMode.SINGLE_TX_MRC:
        ant0[off:] = body
    else:
        ant1[layout.training_b_slice()] = tb
        s1 = body[0::2]
        s2 = body[1::2]
        ant0[off + 0 :: 2] = s1
        ant0[off + 1 :: 2] = -np.conj(s2)
        ant1[off + 0 :: 2] = s2
        ant1[off + 1 :: 2] = np.conj(s1)
        ant0 *= _SQRT1_2
        ant1 *= _SQRT1_2
    return ant0, ant1, body, geo


def _shape_and_shift(
    symbols: np.ndarray, cfg: TxConfig, center_freq: float, start_index: int, rate: float
) -> SampleBlock:
    up = np.zeros(symbols.size * cfg.samples_per_symbol, dtype=np.complex128)
    up[:: cfg.samples_per_symbol] = symbols
    shaped = np.convolve(up, _tx_srrc_taps()) * cfg.gain
    block = SampleBlock(shaped, sample_rate=rate, start_index=start_index)
    return nco_mix(block, center_freq)


def tx_frame(
    desc: FrameDescriptor,
    payload: bytes,
    cfg: TxConfig,
    plan,
    start_index: int = 0,
) -> tuple[SampleBlock, SampleBlock]:
    """Full transmit chain for one frame: two composite-rate blocks, one
    per antenna, length frame_symbols x sps + 64 (shaping tail)."""
    if cfg.samples_per_symbol != plan.samples_per_symbol:
        raise ValueError("config and band plan disagree on samples per symbol")
    ant0, ant1, _, _ = frame_symbol_streams(desc, payload)
    f = plan.center_normalized(cfg.band_index)
    rate = plan.composite_rate
    return (
        _shape_and_shift(ant0, cfg, f, start_index, rate),
        _shape_and_shift(ant1, cfg, f, start_index, rate),
    )


# ---------------------------------------------------------------------------
# Band isolation (receive front end)


@lru_cache(maxsize=None)
def _band_isolation_taps() -> np.ndarray:
    """Matched SRRC behind a cascade of two identical low-pass stages.

    The cascade passes the 0.75 symbol-rate half-band and puts > 80 dB on
    the adjacent band edge at 1.125; folding the three filters into one
    161-tap response is exact (convolution associativity).
    """
    lp = design_kaiser_lowpass(0.09375, 0.140625, 40.0).taps
    srrc = design_srrc(SRRC_ROLL_OFF, SRRC_SPAN_SYMBOLS, SAMPLES_PER_SYMBOL).taps
    return np.convolve(np.convolve(lp, lp), srrc)


def rx_chain_energy() -> tuple[float, float]:
    """(||tx+rx cascade||^2, ||rx chain||^2) for noise calibration."""
    g = _band_isolation_taps()
    c = np.convolve(_tx_srrc_taps(), g)
    return float(np.sum(np.abs(c) ** 2)), float(np.sum(np.abs(g) ** 2))


def symbol_esn0_offset_db() -> float:
    """Gated SNR to symbol-instant Es/N0, in dB.

    Gating measures power over the whole cascade response; the slicer sees
    only the peak tap. The ratio is a fixed property of the pinned filters.
    """
    c = np.convolve(_tx_srrc_taps(), _band_isolation_taps())
    e_c = float(np.sum(np.abs(c) ** 2))
    peak = float(np.max(np.abs(c)) ** 2)
    return float(10 * np.log10(SAMPLES_PER_SYMBOL * peak / e_c))


class Channelizer:
    """Streaming band extractor: shift the band to 0, filter, keep rate.

    The composite stream already runs at 8 samples per symbol, so band
    isolation needs no rate change; output stays at samples_per_symbol
    times the symbol rate.
    """

    def __init__(self, band_index: int, plan):
        self._freq = plan.center_normalized(band_index)
        self._taps = _band_isolation_taps()
        self._hist = np.zeros(len(self._taps) - 1, dtype=np.complex128)

    def push(self, block: SampleBlock) -> SampleBlock:
        if len(block) == 0:
            return SampleBlock(
                np.empty(0, dtype=np.complex128), block.sample_rate, block.start_index
            )
        shifted = nco_mix(block, -self._freq)
        ext = np.concatenate([self._hist, shifted.samples])
        n = len(self._taps) - 1
        out = fftconvolve(ext, self._taps)[n : n + len(block)]
        self._hist = ext[-n:].copy()
        return SampleBlock(out, block.sample_rate, block.start_index)


def channelize(rx: SampleBlock, band_index: int, plan) -> SampleBlock:
    """One-shot version of the streaming band extractor."""
    return Channelizer(band_index, plan).push(rx)


# ---------------------------------------------------------------------------
# Frame detection


@lru_cache(maxsize=None)
def _correlation_kernels(sps: int = SAMPLES_PER_SYMBOL) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Convolution kernels for the two half-preamble correlators."""
    pair = golay_pair(8)
    half = PREAMBLE_CHIPS // 2
    span = (half - 1) * sps  # window length minus one
    ka = np.zeros(span + 1)
    kb = np.zeros(span + 1)
    ka[span - sps * np.arange(half)] = pair.a
    kb[span - sps * np.arange(half)] = pair.b
    return ka, kb, span, half * sps  # offset between the two correlators


@njit(cache=True)
def _scan_metric(
    m,
    m_start,
    hist,
    hist_idx,
    hist_count,
    win_sum,
    mu_frozen,
    frozen,
    searching,
    search_end,
    peak_idx,
    peak_val,
    locked,
    lockout_end,
    alpha,
    lockout_len,
    out_peak,
    out_metric,
    out_mu,
):
    W = NOISE_WINDOW
    GAP = NOISE_GAP
    HLEN = NOISE_WINDOW + NOISE_GAP
    n_out = 0
    for i in range(m.shape[0]):
        n = m_start + i
        v = m[i]
        if hist_count >= GAP + MIN_FLOOR_FILL:
            denom = min(W, hist_count - GAP)
            mu = win_sum / denom
            if mu < 0.0:
                mu = 0.0
        else:
            mu = -1.0
        if (not searching) and (not locked) and mu >= 0.0 and v > alpha * mu:
            searching = True
            search_end = n + PEAK_SEARCH
            peak_idx = n
            peak_val = v
            mu_frozen = mu
            frozen = True
        elif searching and v > peak_val:
            peak_val = v
            peak_idx = n
        if searching and n >= search_end and n - peak_idx >= 8:
            if n_out < out_peak.shape[0]:
                out_peak[n_out] = peak_idx
                out_metric[n_out] = peak_val
                out_mu[n_out] = mu_frozen
                n_out += 1
            searching = False
            locked = True
            lockout_end = peak_idx + lockout_len
        if locked and n >= lockout_end:
            locked = False
            frozen = False
        push = mu_frozen if frozen else v
        if hist_count >= HLEN:
            win_sum += hist[(hist_idx - GAP) % HLEN] - hist[hist_idx]
        elif hist_count >= GAP:
            win_sum += hist[(hist_idx - GAP) % HLEN]
        hist[hist_idx] = push
        hist_idx = (hist_idx + 1) % HLEN
        hist_count += 1
    return (
        n_out,
        hist_idx,
        hist_count,
        win_sum,
        mu_frozen,
        frozen,
        searching,
        search_end,
        peak_idx,
        peak_val,
        locked,
        lockout_end,
    )


def refine_timing(metric: np.ndarray, peak: int) -> int:
    """Pick the sampling phase around a raw peak.

    Scores the 8 candidate offsets [peak-4, peak+3] with a centered
    9-tap moving average of the metric; the first maximum wins, so exact
    ties resolve to the lower index.
    """
    if peak - 8 < 0 or peak + 8 >= metric.size:
        raise ValueError("metric window does not cover the refinement span")
    scores = np.empty(8)
    for k, c in enumerate(range(peak - 4, peak + 4)):
        scores[k] = metric[c - 4 : c + 5].sum()
    return peak - 4 + int(np.argmax(scores))


class FrameDetector:
    """Streaming preamble detector over one or two antenna streams.

    The metric m[n] = |corr_a[n]| + |corr_b[n + 256 sps]| is summed across
    antennas. An adaptive floor (trailing 4096-sample mean, lagged by a
    4096-sample gap and frozen around detections) sets the threshold at
    alpha times the floor; a threshold crossing arms a peak search, and
    further detections are suppressed for about one frame duration.
    """

    _CARRY = 4640  # metric history kept for timing refinement

    def __init__(self, lockout_samples: int, alpha: float = DETECT_ALPHA):
        if lockout_samples <= PEAK_SEARCH:
            raise ValueError("lockout must exceed the peak-search window")
        self.alpha = float(alpha)
        self.lockout_samples = int(lockout_samples)
        ka, kb, span, offset = _correlation_kernels()
        self._ka, self._kb = ka, kb
        self._span = span  # correlator window minus one sample
        self._lag = span + offset  # newest m trails input by this many
        self._x_carry: list[np.ndarray] = []
        self._m_abs = None  # absolute index of the next metric sample
        self._skip = 0  # first-push metric samples computed from zero fill
        self._m_tail = np.zeros(self._CARRY)
        hlen = NOISE_WINDOW + NOISE_GAP
        self._hist = np.zeros(hlen)
        self._hist_idx = 0
        self._hist_count = 0
        self._win_sum = 0.0
        self._mu_frozen = 0.0
        self._frozen = False
        self._searching = False
        self._search_end = 0
        self._peak_idx = 0
        self._peak_val = 0.0
        self._locked = False
        self._lockout_end = 0

    def reset_lockout(self) -> None:
        """Reopen detection immediately (a detected frame failed to parse)."""
        self._locked = False
        self._frozen = False
        self._searching = False

    def _metric(self, streams: list[np.ndarray]) -> np.ndarray:
        m = None
        for k, x in enumerate(streams):
            ext = np.concatenate([self._x_carry[k], x])
            ca = fftconvolve(ext, self._ka)[self._span : len(ext) + self._span]
            cb = fftconvolve(ext, self._kb)[self._span : len(ext) + self._span]
            n_m = len(ext) - self._lag
            part = np.abs(ca[:n_m]) + np.abs(cb[self._lag - self._span : self._lag - self._span + n_m])
            m = part if m is None else m + part
            self._x_carry[k] = ext[-self._lag :].copy()
        return m

    def push(self, block0: SampleBlock, block1: SampleBlock | None = None) -> list[DetectionResult]:
        streams = [block0.samples] if block1 is None else [block0.samples, block1.samples]
        if self._m_abs is None:
            self._m_abs = block0.start_index - self._lag
            self._skip = self._lag
            self._x_carry = [np.zeros(self._lag, dtype=np.complex128) for _ in streams]
        if len(streams) != len(self._x_carry):
            raise ValueError("antenna count changed mid-stream")
        if len(block0) == 0:
            return []
        # corr_b at offset +lag-span needs one block of lookahead; the
        # carry arrangement yields exactly len(block) metric samples.
        m = self._metric(streams)
        if self._skip:
            # drop metric samples whose window reaches before the stream
            # start; they would drag the noise floor toward zero
            k = min(self._skip, m.size)
            m = m[k:]
            self._m_abs += k
            self._skip -= k
            if m.size == 0:
                return []
        out_peak = np.empty(8, dtype=np.int64)
        out_metric = np.empty(8)
        out_mu = np.empty(8)
        (
            n_out,
            self._hist_idx,
            self._hist_count,
            self._win_sum,
            self._mu_frozen,
            self._frozen,
            self._searching,
            self._search_end,
            self._peak_idx,
            self._peak_val,
            self._locked,
            self._lockout_end,
        ) = _scan_metric(
            m,
            self._m_abs,
            self._hist,
            self._hist_idx,
            self._hist_count,
            self._win_sum,
            self._mu_frozen,
            self._frozen,
            self._searching,
            self._search_end,
            self._peak_idx,
            self._peak_val,
            self._locked,
            self._lockout_end,
            self.alpha,
            self.lockout_samples,
            out_peak,
            out_metric,
            out_mu,
        )
        results = []
        if n_out:
            mcat = np.concatenate([self._m_tail, m])
            base = self._m_abs - self._m_tail.size
            for k in range(n_out):
                refined = base + refine_timing(mcat, int(out_peak[k]) - base)
                start = refined - CHAIN_DELAY
                results.append(
                    DetectionResult(
                        sample_index=start,
                        metric=float(out_metric[k]),
                        threshold_at_detection=float(self.alpha * out_mu[k]),
                        timing_phase=int(start % SAMPLES_PER_SYMBOL),
                    )
                )
        self._m_abs += m.size
        if m.size >= self._CARRY:
            self._m_tail = m[-self._CARRY :].copy()
        else:
            self._m_tail = np.concatenate([self._m_tail, m])[-self._CARRY :]
        return results


def recover_timing(
    block0: SampleBlock,
    detection: DetectionResult,
    n_symbols: int,
    block1: SampleBlock | None = None,
) -> tuple[int, np.ndarray, np.ndarray | None]:
    """Symbol-rate samples at the detected timing for both antennas."""
    anchor = detection.sample_index + CHAIN_DELAY - block0.start_index
    last = anchor + (n_symbols - 1) * SAMPLES_PER_SYMBOL
    if anchor < 0 or last >= len(block0):
        raise ValueError("detection does not fit inside the supplied block")
    y0 = block0.samples[anchor : last + 1 : SAMPLES_PER_SYMBOL].copy()
    y1 = None
    if block1 is not None:
        y1 = block1.samples[anchor : last + 1 : SAMPLES_PER_SYMBOL].copy()
    return detection.timing_phase, y0, y1


# ---------------------------------------------------------------------------
# Channel estimation and diversity combining


def estimate_channel(
    y0: np.ndarray, y1: np.ndarray, timestamp: int = 0
) -> ChannelEstimate:
    """Correlate the dedicated training intervals against both sequences.

    h[i][j] = (1/64) sum y_i[n] conj(t_j[n]) over antenna j's interval;
    entries are scaled so the dominant tap has unit magnitude.
    """
    layout = FrameLayout()
    ta, tb = training_sequences()
    h = np.empty((2, 2), dtype=np.complex128)
    sa, sb = layout.training_a_slice(), layout.training_b_slice()
    n = layout.training_symbols
    for i, y in enumerate((y0, y1)):
        h[i, 0] = np.sum(y[sa] * np.conj(ta)) / n
        h[i, 1] = np.sum(y[sb] * np.conj(tb)) / n
    dominant = float(np.max(np.abs(h)))
    if dominant < DEGENERATE_TAP_FLOOR:
        raise DegenerateChannelError(
            f"dominant tap {dominant:.2e} below {DEGENERATE_TAP_FLOOR:.0e}"
        )
    return ChannelEstimate(h=h / dominant, dominant_tap_mag=dominant, timestamp=timestamp)


def combine_mrc(
    y0: np.ndarray,
    y1: np.ndarray,
    est: ChannelEstimate,
    mode: DiversityMode,
) -> tuple[np.ndarray, float]:
    """Diversity combining to a unit-reference symbol stream.

    SINGLE_TX_MRC weights the two receive branches by the conjugate
    column-0 taps. ALAMOUTI inverts the space-time code over symbol pairs
    with all four taps. Both divide by the squared tap norm, so the
    output is the sent symbol plus noise. Returns the stream and the
    combining gain in dB relative to the strongest single branch.
    """
    h = est.h_raw
    if mode == DiversityMode.SINGLE_TX_MRC:
        h00, h10 = h[0, 0], h[1, 0]
        norm = np.abs(h00) ** 2 + np.abs(h10) ** 2
        if norm < DEGENERATE_TAP_FLOOR**2:
            raise DegenerateChannelError("column-0 tap norm is degenerate")
        z = (np.conj(h00) * y0 + np.conj(h10) * y1) / norm
        gain = norm / max(np.abs(h00) ** 2, np.abs(h10) ** 2)
        return z, float(10 * np.log10(gain))

    if len(y0) % 2:
        raise ValueError("space-time combining needs an even symbol count")
    norm = float(np.sum(np.abs(h) ** 2))
    if norm < DEGENERATE_TAP_FLOOR**2:
        raise DegenerateChannelError("tap norm is degenerate")
    r0e, r0o = y0[0::2], np.conj(y0[1::2])
    r1e, r1o = y1[0::2], np.conj(y1[1::2])
    s1 = np.conj(h[0, 0]) * r0e + h[0, 1] * r0o + np.conj(h[1, 0]) * r1e + h[1, 1] * r1o
    s2 = np.conj(h[0, 1]) * r0e - h[0, 0] * r0o + np.conj(h[1, 1]) * r1e - h[1, 0] * r1o
    z = np.empty(y0.size, dtype=np.complex128)
    z[0::2] = s1 / norm
    z[1::2] = s2 / norm
    gain = norm / float(np.max(np.abs(h) ** 2))
    return z, float(10 * np.log10(gain))


def combine_header(y0: np.ndarray, y1: np.ndarray, est: ChannelEstimate) -> np.ndarray:
    """Header symbols always ride antenna 0, so column-0 MRC suffices."""
    h = est.h_raw
    h00, h10 = h[0, 0], h[1, 0]
    norm = np.abs(h00) ** 2 + np.abs(h10) ** 2
    if norm < DEGENERATE_TAP_FLOOR**2:
        raise DegenerateChannelError("column-0 tap norm is degenerate")
    return (np.conj(h00) * y0 + np.conj(h10) * y1) / norm


# ---------------------------------------------------------------------------
# Pilot phase tracking


@njit(cache=True)
def _pilot_phase_track(z, is_pilot, pilot_ref, phi, gain):
    out = np.empty_like(z)
    for n in range(z.shape[0]):
        v = z[n] * np.exp(-1j * phi)
        out[n] = v
        if is_pilot[n]:
            err = np.angle(v * np.conj(pilot_ref))
            phi += gain * err
    return out, phi


def pilot_phase_correct(
    z: np.ndarray, pilot_positions: np.ndarray, gain: float = 0.5
) -> np.ndarray:
    """First-order phase loop driven by the known pilot symbol."""
    is_pilot = np.zeros(z.size, dtype=np.bool_)
    is_pilot[pilot_positions] = True
    out, _ = _pilot_phase_track(
        np.ascontiguousarray(z), is_pilot, complex(PILOT_SYMBOL), 0.0, float(gain)
    )
    return out


# ---------------------------------------------------------------------------
# Adaptive equalizer


@njit(cache=True)
def _slice_nearest(v, mod_id):
    if mod_id == 1:
        re = -_SQRT1_2 if v.real < 0 else _SQRT1_2
        im = -_SQRT1_2 if v.imag < 0 else _SQRT1_2
        return complex(re, im)
    s = _QAM16_SCALE
    e = 2.0 * s
    if v.real <= -e:
        re = -3.0 * s
    elif v.real <= 0.0:
        re = -s
    elif v.real < e:
        re = s
    else:
        re = 3.0 * s
    if v.imag <= -e:
        im = -3.0 * s
    elif v.imag <= 0.0:
        im = -s
    elif v.imag < e:
        im = s
    else:
        im = 3.0 * s
    return complex(re, im)


@njit(cache=True)
def _nlms_run(zext, refext, has_refext, w, mu, mod_id, adapt, skip_before):
    # zext carries taps-1 history samples and refext carries delay
    # reference entries ahead of the new stream, so every window and its
    # adaptation target are complete even at call boundaries.
    taps = w.shape[0]
    n_new = zext.shape[0] - (taps - 1)
    y = np.empty(n_new, dtype=np.complex128)
    for t in range(n_new):
        base = t + taps - 1
        acc = 0.0 + 0.0j
        for k in range(taps):
            acc += w[k] * zext[base - k]
        y[t] = acc
        if adapt and t >= skip_before and mu > 0.0:
            if has_refext[t]:
                d = refext[t]
            else:
                d = _slice_nearest(acc, mod_id)
            e = d - acc
            energy = 1e-12
            for k in range(taps):
                v = zext[base - k]
                energy += v.real**2 + v.imag**2
            fac = mu * e / energy
            for k in range(taps):
                w[k] += fac * np.conj(zext[base - k])
    return y


class NlmsEqualizer:
    """Symbol-spaced transversal filter with normalized-LMS adaptation.

    Initialized to a center-tap impulse, so the raw output is the input
    delayed by (taps-1)/2 symbols. Updates use known reference symbols
    where available and hard decisions elsewhere. Tap state persists
    across frames; the first 64 lifetime outputs are flagged warm-up.
    """

    WARMUP_SYMBOLS = 64

    def __init__(self, num_taps: int = 9, step_size: float = 0.01):
        if num_taps < 1 or num_taps % 2 == 0:
            raise ValueError(f"num_taps must be odd, got {num_taps}")
        if step_size < 0:
            raise ValueError("step_size must be nonnegative")
        self.num_taps = num_taps
        self.step_size = step_size
        self.delay = (num_taps - 1) // 2
        self.w = np.zeros(num_taps, dtype=np.complex128)
        self.w[self.delay] = 1.0
        self.symbols_processed = 0
        self._hist = np.zeros(num_taps - 1, dtype=np.complex128)
        self._ref_hist = np.zeros(self.delay, dtype=np.complex128)
        self._has_hist = np.zeros(self.delay, dtype=np.bool_)

    def process(
        self,
        z: np.ndarray,
        ref: np.ndarray,
        has_ref: np.ndarray,
        modulation: Modulation,
        adapt: bool = True,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Causal filtered stream (delayed by self.delay) plus warm-up flags."""
        if z.size != ref.size or z.size != has_ref.size:
            raise ValueError("stream and reference arrays must align")
        zext = np.concatenate([self._hist, np.asarray(z, dtype=np.complex128)])
        refext = np.concatenate([self._ref_hist, np.asarray(ref, dtype=np.complex128)])
        hasext = np.concatenate([self._has_hist, np.asarray(has_ref, dtype=np.bool_)])
        y = _nlms_run(
            np.ascontiguousarray(zext),
            np.ascontiguousarray(refext),
            np.ascontiguousarray(hasext),
            self.w,
            float(self.step_size),
            int(modulation),
            adapt,
            max(0, self.delay - self.symbols_processed),
        )
        if self.num_taps > 1:
            self._hist = zext[-(self.num_taps - 1) :].copy()
        if self.delay:
            self._ref_hist = refext[-self.delay :].copy()
            self._has_hist = hasext[-self.delay :].copy()
        warmup = (
            np.arange(self.symbols_processed, self.symbols_processed + z.size)
            < self.WARMUP_SYMBOLS
        )
        self.symbols_processed += z.size
        return y, warmup

    def process_aligned(
        self,
        z: np.ndarray,
        ref: np.ndarray,
        has_ref: np.ndarray,
        modulation: Modulation,
    ) -> np.ndarray:
        """Delay-compensated output the same length as the input.

        The trailing delay symbols are flushed with zero input and no
        adaptation, mirroring the idle guard that follows each frame.
        """
        d = self.delay
        y_main, _ = self.process(z, ref, has_ref, modulation)
        if d == 0:
            return y_main
        zeros_c = np.zeros(d, dtype=np.complex128)
        y_tail, _ = self.process(
            zeros_c, zeros_c, np.zeros(d, dtype=np.bool_), modulation, adapt=False
        )
        return np.concatenate([y_main[d:], y_tail])


# ---------------------------------------------------------------------------
# Full streaming receiver for one directed link


@dataclass
class RxAccumulators:
    """Running sums behind the cumulative link metrics."""

    frames_detected: int = 0
    frames_crc_ok: int = 0
    header_failures: int = 0
    payload_bits: int = 0
    bit_errors: int = 0
    branch_num: float = 0.0  # per-branch data-aided, training + pilots
    branch_den: float = 0.0
    evm_num: float = 0.0  # combined stream, pre-equalizer
    evm_den: float = 0.0
    evm_post_num: float = 0.0
    evm_post_den: float = 0.0
    genie_pre_num: float = 0.0  # reconstructed-payload EVM, both sides of EQ
    genie_pre_den: float = 0.0
    genie_post_num: float = 0.0
    genie_post_den: float = 0.0
    power_on_sum: float = 0.0
    power_on_count: int = 0
    power_off_sum: float = 0.0
    power_off_count: int = 0

    def sinr_db(self) -> float:
        if self.power_on_count == 0 or self.power_off_count == 0:
            return float("nan")
        p_on = self.power_on_sum / self.power_on_count
        p_off = max(self.power_off_sum / self.power_off_count, POWER_FLOOR)
        return float(10 * np.log10(max((p_on - p_off) / p_off, POWER_FLOOR)))


class LinkReceiver:
    """Composite-rate samples in, decoded frames and metrics out.

    One instance serves one directed link: it isolates the source node's
    band on both antennas, detects preambles, and runs the frame pipeline
    (timing, channel estimate, header, combining, phase tracking,
    equalization, demap, CRC). Equalizer state persists across frames.
    """

    def __init__(
        self,
        src: int,
        dst: int,
        band_index: int,
        plan,
        expected_frame_symbols: int = frame_geometry(
            4992, Modulation.QAM16
        ).frame_symbols,
    ):
        self.src = src
        self.dst = dst
        self.plan = plan
        self.band_index = band_index
        self.stats = RxAccumulators()
        self.equalizer = NlmsEqualizer()
        self.last_constellation = np.empty(0, dtype=np.complex128)
        self._expected_frame_symbols = expected_frame_symbols
        self._build_front_end()

    def _build_front_end(self) -> None:
        self._chan0 = Channelizer(self.band_index, self.plan)
        self._chan1 = Channelizer(self.band_index, self.plan)
        self._detector = FrameDetector(self._lockout())
        self._held0: SampleBlock | None = None
        self._held1: SampleBlock | None = None

    def _lockout(self) -> int:
        sym = self._expected_frame_symbols + GUARD_SYMBOLS
        return sym * SAMPLES_PER_SYMBOL - LOCKOUT_MARGIN

    def retune(self, band_index: int) -> None:
        """Move to a new band; filter and detector state restart clean."""
        self.band_index = band_index
        self._build_front_end()

    def set_expected_frame(self, frame_symbols: int) -> None:
        self._expected_frame_symbols = frame_symbols
        self._detector.lockout_samples = self._lockout()

    def push_quantum(self, rx0: SampleBlock, rx1: SampleBlock) -> list[FrameEvent]:
        y0 = self._chan0.push(rx0)
        y1 = self._chan1.push(rx1)
        # detection can trail a frame by most of a short quantum, so keep
        # the previous quantum in view for the decode
        if (
            self._held0 is not None
            and self._held0.start_index + len(self._held0) == y0.start_index
        ):
            e0 = SampleBlock(
                np.concatenate([self._held0.samples, y0.samples]),
                y0.sample_rate,
                self._held0.start_index,
            )
            e1 = SampleBlock(
                np.concatenate([self._held1.samples, y1.samples]),
                y1.sample_rate,
                self._held1.start_index,
            )
        else:
            e0, e1 = y0, y1
        events = []
        for det in self._detector.push(y0, y1):
            ev = self._decode(det, e0, e1)
            if ev is not None:
                events.append(ev)
        self._held0, self._held1 = y0, y1
        return events

    # -- frame pipeline --

    def _decode(self, det: DetectionResult, y0: SampleBlock, y1: SampleBlock) -> FrameEvent | None:
        layout = FrameLayout()
        anchor = det.sample_index + CHAIN_DELAY - y0.start_index
        head_syms = layout.body_offset
        if anchor < 0 or anchor + head_syms * SAMPLES_PER_SYMBOL > len(y0):
            self._detector.reset_lockout()
            return None  # detection too close to the buffer edge

        def take(blk: SampleBlock, n0: int, n1: int) -> np.ndarray:
            a = anchor + n0 * SAMPLES_PER_SYMBOL
            b = anchor + n1 * SAMPLES_PER_SYMBOL
            return blk.samples[a:b:SAMPLES_PER_SYMBOL]

        t0 = take(y0, 0, head_syms)
        t1 = take(y1, 0, head_syms)
        try:
            est = estimate_channel(t0, t1, timestamp=det.sample_index)
            header_z = combine_header(
                t0[layout.header_slice()], t1[layout.header_slice()], est
            )
        except DegenerateChannelError:
            # no usable taps behind this trigger: noise, not a frame
            self._detector.reset_lockout()
            return None
        self.stats.frames_detected += 1
        header = decode_header(bits_to_bytes(demap_qpsk_gray(header_z)))
        if not header.crc_ok or header.modulation is None:
            self.stats.header_failures += 1
            self._detector.reset_lockout()
            return self._event(det, header, False, False, None, 0, 0, None)

        geo = frame_geometry(header.payload_bytes, header.modulation)
        body_end = anchor + geo.frame_symbols * SAMPLES_PER_SYMBOL
        if body_end > len(y0):
            self._detector.reset_lockout()
            return self._event(det, header, True, False, None, 0, 0, None)
        b0 = take(y0, head_syms, geo.frame_symbols)
        b1 = take(y1, head_syms, geo.frame_symbols)
        try:
            body_z, _ = combine_mrc(b0, b1, est, header.diversity)
        except DegenerateChannelError:
            self._detector.reset_lockout()
            return self._event(det, header, True, False, None, 0, 0, None)
        body_z = pilot_phase_correct(body_z, geo.pilot_positions)

        # Equalize header+body as one stream: header and pilots are known
        # references, everything else is decision-directed.
        header_ref = map_qpsk_gray(payload_bits(encode_header_from_info(header)))
        stream = np.concatenate([header_z, body_z])
        ref = np.zeros(stream.size, dtype=np.complex128)
        has_ref = np.zeros(stream.size, dtype=np.bool_)
        ref[: header_ref.size] = header_ref
        has_ref[: header_ref.size] = True
        ref[header_ref.size + geo.pilot_positions] = PILOT_SYMBOL
        has_ref[header_ref.size + geo.pilot_positions] = True
        eq = self.equalizer.process_aligned(stream, ref, has_ref, header.modulation)
        eq_body = eq[header_ref.size :]

        # data-aided EVM at known positions, before and after equalization
        self._accumulate_evm(header_z, body_z, eq, header_ref, geo)

        data_pos = np.concatenate([geo.payload_positions, geo.crc_positions])
        bits = demap_symbols(eq_body[data_pos], header.modulation)
        payload_len_bits = 8 * header.payload_bytes
        payload = bits_to_bytes(bits[:payload_len_bits])
        crc_field = bits_to_bytes(bits[payload_len_bits:])
        crc_ok = check_body(payload, crc_field)
        if crc_ok:
            self.stats.frames_crc_ok += 1
        self._accumulate_branch_evm(t0, t1, b0, b1, est, header, geo, payload, crc_ok)

        nbits = 0
        nerr = 0
        if header.counted_payload:
            sent = counted_payload(header.src, header.dst, header.seq, header.payload_bytes)
            sent_bits = payload_bits(sent)
            got_bits = bits[:payload_len_bits]
            nerr = int(np.count_nonzero(sent_bits != got_bits))
            nbits = payload_len_bits
            self.stats.payload_bits += nbits
            self.stats.bit_errors += nerr
            self._accumulate_genie_evm(body_z, eq_body, sent, header, geo)

        sinr = self._gated_power(y0, y1, anchor, geo)
        pts = eq_body[data_pos]
        self.last_constellation = pts[:: max(1, pts.size // 512)][:512].copy()
        return self._event(det, header, True, crc_ok, payload, nbits, nerr, sinr)

    def _accumulate_branch_evm(
        self, t0, t1, b0, b1, est, header, geo, payload, crc_ok
    ) -> None:
        """Per-branch data-aided EVM against channel-scaled references.

        Observations are channelizer-output symbols before combining, so
        the pooled ratio tracks the per-antenna noise-to-signal ratio of
        the link. Training intervals with a live transmitter always
        contribute; pilot positions join once the body reference is known
        (immediately in single-TX mode, from the decoded payload in the
        space-time mode).
        """
        layout = FrameLayout()
        h = est.h_raw
        ta, tb = training_sequences()
        sa, sb = layout.training_a_slice(), layout.training_b_slice()
        obs = [t0[sa], t1[sa]]
        refs = [h[0, 0] * ta, h[1, 0] * ta]
        if header.diversity == DiversityMode.ALAMOUTI:
            obs += [t0[sb], t1[sb]]
            refs += [h[0, 1] * tb, h[1, 1] * tb]
        pil = geo.pilot_positions
        u = None
        if pil.size and header.diversity == DiversityMode.SINGLE_TX_MRC:
            u = (
                np.full(pil.size, PILOT_SYMBOL, dtype=np.complex128),
                np.zeros(pil.size, dtype=np.complex128),
            )
        elif pil.size and crc_ok:
            desc = FrameDescriptor(
                src=header.src,
                dst=header.dst,
                seq=header.seq,
                payload_bytes=header.payload_bytes,
                modulation=header.modulation,
                diversity=header.diversity,
                counted_payload=header.counted_payload,
            )
            x0, x1, _, _ = frame_symbol_streams(desc, payload)
            off = layout.body_offset
            # undo the dual-antenna power split; the channel estimate
            # absorbed it, so references stay at received scale
            u = (x0[off:][pil] * np.sqrt(2.0), x1[off:][pil] * np.sqrt(2.0))
        if u is not None:
            for i, b in enumerate((b0, b1)):
                obs.append(b[pil])
                refs.append(h[i, 0] * u[0] + h[i, 1] * u[1])
        num = 0.0
        den = 0.0
        for o, r in zip(obs, refs):
            num += float(np.sum(np.abs(o - r) ** 2))
            den += float(np.sum(np.abs(r) ** 2))
        self.stats.branch_num += num
        self.stats.branch_den += den

    def _accumulate_evm(self, header_z, body_z, eq, header_ref, geo) -> None:
        pil = geo.pilot_positions
        pre_err = np.concatenate(
            [header_z - header_ref, body_z[pil] - PILOT_SYMBOL]
        )
        post_err = np.concatenate(
            [
                eq[: header_ref.size] - header_ref,
                eq[header_ref.size + pil] - PILOT_SYMBOL,
            ]
        )
        den = header_ref.size * 1.0 + pil.size * abs(PILOT_SYMBOL) ** 2
        self.stats.evm_num += float(np.sum(np.abs(pre_err) ** 2))
        self.stats.evm_den += den
        self.stats.evm_post_num += float(np.sum(np.abs(post_err) ** 2))
        self.stats.evm_post_den += den

    def _accumulate_genie_evm(self, body_z, eq_body, sent_payload, header, geo) -> None:
        data = map_symbols(body_bits(sent_payload), header.modulation)
        ref = np.empty(geo.body_symbols, dtype=np.complex128)
        ref[geo.payload_positions] = data[: geo.n_payload_symbols]
        ref[geo.crc_positions] = data[geo.n_payload_symbols :]
        ref[geo.pilot_positions] = PILOT_SYMBOL
        den = float(np.sum(np.abs(ref) ** 2))
        self.stats.genie_pre_num += float(np.sum(np.abs(body_z - ref) ** 2))
        self.stats.genie_pre_den += den
        self.stats.genie_post_num += float(np.sum(np.abs(eq_body - ref) ** 2))
        self.stats.genie_post_den += den

    def _gated_power(self, y0, y1, anchor, geo) -> float | None:
        on_a = anchor + ON_GATE_START_SYMBOL * SAMPLES_PER_SYMBOL
        on_b = anchor + geo.frame_symbols * SAMPLES_PER_SYMBOL
        off_a = on_b + OFF_GATE_START_SYMBOL * SAMPLES_PER_SYMBOL
        off_b = on_b + OFF_GATE_END_SYMBOL * SAMPLES_PER_SYMBOL
        if off_b > len(y0):
            return None  # guard gate not in view for this frame
        p_on = 0.5 * float(
            np.mean(np.abs(y0.samples[on_a:on_b]) ** 2)
            + np.mean(np.abs(y1.samples[on_a:on_b]) ** 2)
        )
        p_off = 0.5 * float(
            np.mean(np.abs(y0.samples[off_a:off_b]) ** 2)
            + np.mean(np.abs(y1.samples[off_a:off_b]) ** 2)
        )
        self.stats.power_on_sum += p_on * (on_b - on_a)
        self.stats.power_on_count += on_b - on_a
        self.stats.power_off_sum += p_off * (off_b - off_a)
        self.stats.power_off_count += off_b - off_a
        p_off = max(p_off, POWER_FLOOR)
        return float(10 * np.log10(max((p_on - p_off) / p_off, POWER_FLOOR)))

    def _event(self, det, header, header_ok, crc_ok, payload, nbits, nerr, sinr) -> FrameEvent:
        return FrameEvent(
            src=header.src if header_ok else self.src,
            dst=header.dst if header_ok else self.dst,
            seq=header.seq if header_ok else -1,
            header_ok=header_ok,
            crc_ok=crc_ok,
            payload=payload,
            payload_bits=nbits,
            bit_errors=nerr,
            evm_pre_pct=self.evm_pre_pct(),
            evm_post_pct=self.evm_post_pct(),
            sinr_db=sinr,
            detection=det,
        )

    # -- metric views --

    def evm_rms_pct(self) -> float:
        if self.stats.branch_den == 0:
            return 0.0
        return float(100 * np.sqrt(self.stats.branch_num / self.stats.branch_den))

    def evm_pre_pct(self) -> float:
        if self.stats.evm_den == 0:
            return 0.0
        return float(100 * np.sqrt(self.stats.evm_num / self.stats.evm_den))

    def evm_post_pct(self) -> float:
        if self.stats.evm_post_den == 0:
            return 0.0
        return float(100 * np.sqrt(self.stats.evm_post_num / self.stats.evm_post_den))

    def equalizer_gain_db(self) -> float:
        """EVM improvement across the equalizer, known payloads only."""
        s = self.stats
        if s.genie_pre_den == 0:
            return 0.0
        pre = s.genie_pre_num / s.genie_pre_den
        post = s.genie_post_num / s.genie_post_den
        if post == 0.0:
            return float("inf")
        return float(10 * np.log10(pre / post))

    def metrics(self, frames_sent: int) -> LinkMetrics:
        s = self.stats
        ber = s.bit_errors / s.payload_bits if s.payload_bits else 0.0
        fer = 1.0 - s.frames_crc_ok / frames_sent if frames_sent else 0.0
        return LinkMetrics(
            evm_rms_pct=self.evm_rms_pct(),
            sinr_db=s.sinr_db(),
            ber=ber,
            fer=max(fer, 0.0),
            frames_detected=s.frames_detected,
            frames_crc_ok=s.frames_crc_ok,
            payload_bits=s.payload_bits,
            bit_errors=s.bit_errors,
        )


def encode_header_from_info(info: HeaderInfo) -> bytes:
    """Re-encode a decoded header; used as an equalizer reference."""
    desc = FrameDescriptor(
        src=info.src,
        dst=info.dst,
        seq=info.seq,
        payload_bytes=info.payload_bytes,
        modulation=info.modulation,
        diversity=info.diversity,
        counted_payload=info.counted_payload,
    )
    return encode_header(desc)
