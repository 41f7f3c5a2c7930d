"""Streaming DSP kernels shared by the transmit and receive chains.

Everything here operates on complex baseband sample streams. Stateful
kernels carry their delay lines explicitly so that a stream may be
processed in blocks of any size with output bit-identical to one-shot
processing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal


@dataclass
class SampleBlock:
    """Contiguous chunk of a complex baseband stream.

    Parameters
    ----------
    samples : ndarray
        One-dimensional array of samples. Promoted to complex128.
    sample_rate : float
        Samples per second (or per normalized time unit). Must be > 0.
    start_index : int
        Absolute index of ``samples[0]`` counted from the stream origin.
        Kernels that depend on absolute time (the NCO) use it; everything
        else passes it through.
    """

    samples: np.ndarray
    sample_rate: float
    start_index: int = 0

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if self.start_index < 0:
            raise ValueError("start_index must be nonnegative")

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class FirTaps:
    """Immutable FIR tap vector plus a human-readable description."""

    taps: np.ndarray
    description: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "taps", np.atleast_1d(np.asarray(self.taps)))
        if self.taps.ndim != 1 or self.taps.size == 0:
            raise ValueError("taps must be a nonempty one-dimensional array")

    def __len__(self) -> int:
        return self.taps.shape[0]


@dataclass(frozen=True)
class GolayPair:
    """Complementary pair of binary (+1/-1) sequences of length 2**m."""

    a: np.ndarray
    b: np.ndarray
    log2_length: int


class FirState:
    """Delay-line carry for streaming :func:`fir_filter` calls.

    Holds the trailing ntaps - 1 input samples so each output sample is
    always computed from exactly the same window regardless of how the
    stream is blocked.
    """

    def __init__(self, ntaps: int) -> None:
        if ntaps < 1:
            raise ValueError("ntaps must be >= 1")
        self.history = np.zeros(max(ntaps - 1, 0), dtype=np.complex128)

    @classmethod
    def for_taps(cls, taps: FirTaps) -> "FirState":
        return cls(len(taps))


def design_srrc(roll_off: float, span_symbols: int, samples_per_symbol: int) -> FirTaps:
    """Design a unit-energy square-root raised-cosine interpolation filter.

    The impulse response is evaluated in closed form with the analytic
    limits substituted at t = 0 and |t| = Ts/(4*roll_off), then normalized
    to unit energy. Tap count is span_symbols * samples_per_symbol + 1,
    which is odd, so the filter is exactly symmetric (linear phase).

    Parameters
    ----------
    roll_off : float
        Excess-bandwidth factor, in (0, 1].
    span_symbols : int
        Total filter span in symbols.
    samples_per_symbol : int
        Oversampling factor.

    Returns
    -------
    FirTaps
    """
    if not 0.0 < roll_off <= 1.0:
        raise ValueError(f"roll_off must be in (0, 1], got {roll_off}")
    if span_symbols < 1 or samples_per_symbol < 1:
        raise ValueError("span_symbols and samples_per_symbol must be >= 1")
    n_side = span_symbols * samples_per_symbol
    if n_side % 2 != 0:
        raise ValueError("span_symbols * samples_per_symbol must be even")
    half = n_side // 2
    beta = roll_off
    t = np.arange(half + 1, dtype=np.float64) / samples_per_symbol
    h = np.empty(half + 1, dtype=np.float64)
    # singular points of the closed form
    quarter = 1.0 / (4.0 * beta)
    at_zero = t == 0.0
    at_quarter = np.abs(t - quarter) < 1e-9
    regular = ~(at_zero | at_quarter)
    tr = t[regular]
    num = np.sin(np.pi * tr * (1 - beta)) + 4 * beta * tr * np.cos(np.pi * tr * (1 + beta))
    den = np.pi * tr * (1 - (4 * beta * tr) ** 2)
    h[regular] = num / den
    h[at_zero] = 1.0 - beta + 4.0 * beta / np.pi
    h[at_quarter] = (beta / np.sqrt(2.0)) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
        + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
    )
    # mirror the nonnegative half so symmetry is exact in floating point
    taps = np.concatenate([h[:0:-1], h])
    taps /= np.sqrt(np.sum(taps * taps))
    return FirTaps(
        taps,
        f"srrc roll_off={roll_off} span={span_symbols}sym sps={samples_per_symbol}",
    )


def design_kaiser_lowpass(
    passband_edge: float, stopband_edge: float, stopband_atten_db: float
) -> FirTaps:
    """Design a Kaiser-window lowpass FIR.

    Edges are in cycles per sample (Nyquist = 0.5). Tap count comes from
    the standard Kaiser order estimate for the requested attenuation and
    transition width, rounded up to odd; the cutoff sits at the middle of
    the transition band.
    """
    if not 0.0 < passband_edge < stopband_edge < 0.5:
        raise ValueError(
            f"need 0 < passband_edge < stopband_edge < 0.5, got "
            f"({passband_edge}, {stopband_edge})"
        )
    if stopband_atten_db < 10.0:
        raise ValueError("stopband_atten_db must be >= 10 dB")
    width = (stopband_edge - passband_edge) / 0.5  # relative to Nyquist
    ntaps, beta = signal.kaiserord(stopband_atten_db, width)
    if ntaps % 2 == 0:
        ntaps += 1
    cutoff = 0.5 * (passband_edge + stopband_edge)
    taps = signal.firwin(ntaps, cutoff, window=("kaiser", beta), fs=1.0)
    return FirTaps(
        taps,
        f"kaiser lowpass pass={passband_edge} stop={stopband_edge} "
        f"atten={stopband_atten_db}dB ntaps={ntaps}",
    )


def fir_filter(block: SampleBlock, taps: FirTaps, state: FirState) -> SampleBlock:
    """Run one block of a stream through a causal FIR filter.

    The delay line in ``state`` is updated in place, so feeding a stream
    through in blocks of any size yields output bit-identical to a single
    call. Group delay of (ntaps - 1) / 2 samples is not compensated here;
    callers account for it.
    """
    if len(state.history) != len(taps) - 1:
        raise ValueError("state was initialized for a different tap count")
    if len(block) == 0:
        return SampleBlock(
            np.empty(0, dtype=np.complex128), block.sample_rate, block.start_index
        )
    b = np.asarray(taps.taps, dtype=np.complex128)
    ntaps = len(taps)
    if ntaps == 1:
        out = b[0] * block.samples
    else:
        ext = np.concatenate([state.history, block.samples])
        # direct convolution; every output sample is a dot product over a
        # window determined only by absolute stream position, so blocking
        # cannot change the result
        out = np.convolve(ext, b, mode="full")[ntaps - 1 : ntaps - 1 + len(block)]
        state.history = ext[-(ntaps - 1) :].copy()
    return SampleBlock(out, block.sample_rate, block.start_index)


class OverlapSaveFir:
    """FFT-based streaming FIR with fixed internal segmentation.

    Input is buffered into segments of ``segment_len`` samples anchored to
    the absolute stream position, so any blocking of the same stream
    produces bit-identical output. ``push`` returns whatever full segments
    are ready (possibly empty); ``flush`` drains the remainder.
    """

    def __init__(self, taps: FirTaps, segment_len: int = 32768) -> None:
        if segment_len < len(taps):
            raise ValueError("segment_len must be at least the tap count")
        self._ntaps = len(taps)
        self._seg = int(segment_len)
        nfft = 1
        while nfft < self._seg + self._ntaps - 1:
            nfft *= 2
        self._nfft = nfft
        self._h = np.fft.fft(np.asarray(taps.taps, dtype=np.complex128), nfft)
        self._history = np.zeros(self._ntaps - 1, dtype=np.complex128)
        self._pending = np.empty(0, dtype=np.complex128)
        self._out_index = 0  # absolute index of the next output sample

    def _run_segment(self, seg: np.ndarray) -> np.ndarray:
        x = np.concatenate([self._history, seg])
        y = np.fft.ifft(np.fft.fft(x, self._nfft) * self._h)
        out = y[self._ntaps - 1 : self._ntaps - 1 + len(seg)]
        if self._ntaps > 1:
            self._history = x[-(self._ntaps - 1) :].copy()
        return out

    def push(self, samples: np.ndarray) -> np.ndarray:
        x = np.asarray(samples, dtype=np.complex128)
        self._pending = np.concatenate([self._pending, x]) if len(self._pending) else x
        chunks = []
        while len(self._pending) >= self._seg:
            chunks.append(self._run_segment(self._pending[: self._seg]))
            self._pending = self._pending[self._seg :]
        if not chunks:
            return np.empty(0, dtype=np.complex128)
        out = np.concatenate(chunks)
        self._out_index += len(out)
        return out

    def flush(self) -> np.ndarray:
        if len(self._pending) == 0:
            return np.empty(0, dtype=np.complex128)
        out = self._run_segment(self._pending)
        self._pending = np.empty(0, dtype=np.complex128)
        self._out_index += len(out)
        return out


def nco_mix(block: SampleBlock, freq_offset: float, initial_phase: float = 0.0) -> SampleBlock:
    """Mix a stream with a numerically controlled oscillator.

    output[n] = input[n] * exp(j * (2*pi*freq_offset*(start_index + n)
    + initial_phase)), with freq_offset in cycles per sample. Phase is
    derived from the absolute sample index, never accumulated, so mixing
    by +f then -f (both with zero initial phase) recovers the input to
    within rounding regardless of how the stream was blocked.
    """
    n = len(block)
    if n == 0:
        return SampleBlock(
            np.empty(0, dtype=np.complex128), block.sample_rate, block.start_index
        )
    idx = block.start_index + np.arange(n, dtype=np.float64)
    # reduce cycles modulo 1 before converting to radians to keep the
    # argument of sin/cos small for long streams
    theta = 2.0 * np.pi * np.remainder(freq_offset * idx, 1.0) + initial_phase
    out = block.samples * np.exp(1j * theta)
    return SampleBlock(out, block.sample_rate, block.start_index)


def golay_pair(log2_length: int) -> GolayPair:
    """Build a complementary Golay pair of length 2**log2_length.

    Uses the standard recursive construction a' = [a b], b' = [a -b]
    starting from the length-1 pair ([1], [1]). The sum of the aperiodic
    autocorrelations of the two sequences is 2N at lag zero and exactly
    zero at every other lag.
    """
    if not 1 <= log2_length <= 16:
        raise ValueError(f"log2_length must be in [1, 16], got {log2_length}")
    a = np.array([1], dtype=np.int64)
    b = np.array([1], dtype=np.int64)
    for _ in range(log2_length):
        a, b = np.concatenate([a, b]), np.concatenate([a, -b])
    return GolayPair(a, b, log2_length)


def rate_change(
    block: SampleBlock, up: int, down: int, anti_alias: FirTaps | None = None
) -> SampleBlock:
    """Resample a block by the rational factor up/down.

    Zero-insertion upsampling (scaled by ``up`` to preserve amplitude),
    optional anti-alias filtering, then decimation. The filter, when
    provided, is applied causally with no tail, so the output length is
    ceil(len * up / down).
    """
    if up < 1 or down < 1:
        raise ValueError("up and down must be >= 1")
    x = block.samples
    if up > 1:
        stuffed = np.zeros(len(x) * up, dtype=np.complex128)
        stuffed[::up] = x * up
        x = stuffed
    if anti_alias is not None:
        x = signal.lfilter(np.asarray(anti_alias.taps, dtype=np.complex128), [1.0], x)
    if down > 1:
        x = x[::down]
    return SampleBlock(
        x,
        block.sample_rate * up / down,
        block.start_index * up // down,
    )
