"""Shared-medium model: superposition of every node's transmission at
every other node's antennas, through per-pair 2x2 FIR paths with
optional frequency offset and drift, plus calibrated receiver noise."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np

from .dsp import SampleBlock
from .modem import SAMPLES_PER_SYMBOL, rx_chain_energy

# one symbol apart at 8 samples/symbol: echoes land at symbol spacing,
# where the symbol-spaced equalizer can act on them
MULTIPATH_DELAY_SAMPLES = (0, 8, 16)
MULTIPATH_POWERS_DB = (0.0, -9.0, -18.0)
MAX_CFO_NORMALIZED = 1e-4  # of the symbol rate, MOBILE profile only

# MOBILE taps also drift by this many cycles per composite sample: about
# 0.09 cycles across one default frame, well inside the pilot loop range.
TAP_ROTATION_CYCLES_PER_SAMPLE = 1e-6

# spawn-key domains; distinct keys never share generator state
NOISE_DOMAIN = 0
FADING_DOMAIN = 1
PAYLOAD_DOMAIN = 2


class ChannelProfile(Enum):
    IDEAL = "IDEAL"
    AWGN_ONLY = "AWGN_ONLY"
    MULTIPATH_LIGHT = "MULTIPATH_LIGHT"
    MOBILE = "MOBILE"


def rng_stream(seed: int, domain: int, index: int) -> np.random.Generator:
    """Independent generator keyed by (domain, index) under one seed."""
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(domain, index))
    )


def make_noise_streams(seed: int, nodes: int = 4) -> dict[int, np.random.Generator]:
    """One receiver-noise stream per node, owned by that node's RX path."""
    return {n: rng_stream(seed, NOISE_DOMAIN, n) for n in range(nodes)}


def noise_power_for_snr(snr_db: float) -> float:
    """Per-sample complex noise variance that puts the gated in-band SINR
    at snr_db for a unit-power transmitter.

    The matched filter cascade shapes both signal and noise, so the
    calibration divides the cascade's symbol-instant signal energy by the
    receive chain's noise bandwidth gain.
    """
    e_c, e_g = rx_chain_energy()
    return e_c / (SAMPLES_PER_SYMBOL * 10 ** (snr_db / 10) * e_g)


@dataclass(frozen=True)
class PairPath:
    """One directed propagation path: TX antenna j to RX antenna i."""

    taps: np.ndarray  # complex, shape (2, 2, n_taps) at composite rate
    delay_samples: int = 0
    cfo_normalized: float = 0.0  # frequency offset as a fraction of Rs

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.complex128)
        if taps.ndim != 3 or taps.shape[:2] != (2, 2) or taps.shape[2] < 1:
            raise ValueError(f"taps must be (2, 2, n>=1), got {taps.shape}")
        if self.delay_samples < 0:
            raise ValueError(f"delay must be nonnegative, got {self.delay_samples}")
        if not np.isfinite(self.cfo_normalized):
            raise ValueError("cfo must be finite")
        object.__setattr__(self, "taps", taps)


@dataclass(frozen=True)
class ChannelRealization:
    """Immutable draw of the whole medium: every directed pair's path and
    every node's receiver noise level."""

    profile: ChannelProfile
    pairs: dict[tuple[int, int], PairPath]
    noise_power: dict[int, float]  # dst node -> variance per complex sample
    tap_rotation_cycles: float = 0.0  # per composite sample, MOBILE only

    def __post_init__(self):
        for (src, dst), path in self.pairs.items():
            if src == dst:
                raise ValueError(f"self-path ({src}, {dst}) is not allowed")
            if not isinstance(path, PairPath):
                raise ValueError(f"pair ({src}, {dst}) is not a PairPath")
        for node, power in self.noise_power.items():
            if power < 0:
                raise ValueError(f"noise power for node {node} is negative")


def _unit_taps() -> np.ndarray:
    return np.ones((2, 2, 1), dtype=np.complex128)


def _multipath_taps(rng: np.random.Generator) -> np.ndarray:
    length = MULTIPATH_DELAY_SAMPLES[-1] + 1
    taps = np.zeros((2, 2, length), dtype=np.complex128)
    for delay, p_db in zip(MULTIPATH_DELAY_SAMPLES, MULTIPATH_POWERS_DB):
        scale = np.sqrt(10 ** (p_db / 10) / 2.0)
        taps[:, :, delay] = scale * (
            rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        )
    return taps


def make_realization(
    profile: ChannelProfile | str,
    snr_db: float,
    seed: int,
    nodes: int = 4,
    snr_overrides: Mapping[tuple[int, int], float] | None = None,
) -> ChannelRealization:
    """Draw the medium for one run.

    IDEAL and AWGN_ONLY use unit taps on all four antenna paths; IDEAL
    has no noise. MULTIPATH_LIGHT draws three independent complex
    Gaussian taps per antenna path, one symbol apart, with powers
    (0, -9, -18) dB. MOBILE adds a per-pair frequency offset up to 1e-4
    of the symbol rate and slow tap rotation. A per-link SNR override
    scales that pair's taps relative to the baseline snr_db.
    """
    profile = ChannelProfile(profile)
    fading = rng_stream(seed, FADING_DOMAIN, 0)
    overrides = dict(snr_overrides or {})
    pairs: dict[tuple[int, int], PairPath] = {}
    for src in range(nodes):
        for dst in range(nodes):
            if src == dst:
                continue
            if profile in (ChannelProfile.IDEAL, ChannelProfile.AWGN_ONLY):
                taps = _unit_taps()
                cfo = 0.0
            else:
                taps = _multipath_taps(fading)
                cfo = 0.0
                if profile == ChannelProfile.MOBILE:
                    cfo = float(fading.uniform(-MAX_CFO_NORMALIZED, MAX_CFO_NORMALIZED))
            if (src, dst) in overrides:
                taps = taps * np.sqrt(10 ** ((overrides[src, dst] - snr_db) / 10))
            pairs[src, dst] = PairPath(taps=taps, delay_samples=0, cfo_normalized=cfo)
    if profile == ChannelProfile.IDEAL:
        noise = {n: 0.0 for n in range(nodes)}
    else:
        noise = {n: noise_power_for_snr(snr_db) for n in range(nodes)}
    rotation = (
        TAP_ROTATION_CYCLES_PER_SAMPLE if profile == ChannelProfile.MOBILE else 0.0
    )
    return ChannelRealization(
        profile=profile, pairs=pairs, noise_power=noise, tap_rotation_cycles=rotation
    )


def propagate(
    tx: Mapping[int, tuple[SampleBlock, SampleBlock]],
    realization: ChannelRealization,
    noise_streams: Mapping[int, np.random.Generator],
) -> dict[int, tuple[SampleBlock, SampleBlock]]:
    """Superpose every transmitter at every other node's two antennas.

    All TX blocks must share one sample rate, start index, and length;
    outputs cover the same span. Convolution tails past the block end
    fall inside the inter-frame guard by construction and are dropped.
    A node never hears itself. Receiver noise comes from the destination
    node's own stream, antenna 0 first, so output is reproducible for a
    fixed realization, streams, and block schedule.
    """
    if not realization.noise_power:
        raise ValueError("realization has no destination nodes")
    spans = {
        (b[0].sample_rate, b[0].start_index, len(b[0]), b[1].sample_rate,
         b[1].start_index, len(b[1]))
        for b in tx.values()
    }
    if len({(s[0], s[1], s[2]) for s in spans} | {(s[3], s[4], s[5]) for s in spans}) > 1:
        raise ValueError("TX blocks must share rate, start index, and length")
    if tx:
        first = next(iter(tx.values()))[0]
        rate, start, n = first.sample_rate, first.start_index, len(first)
    else:
        raise ValueError("propagate needs at least the span of one block")

    out: dict[int, tuple[SampleBlock, SampleBlock]] = {}
    for dst in sorted(realization.noise_power):
        acc = [np.zeros(n, dtype=np.complex128) for _ in range(2)]
        for src in sorted(tx):
            if src == dst:
                continue
            if (src, dst) not in realization.pairs:
                raise ValueError(f"realization has no path for pair ({src}, {dst})")
            path = realization.pairs[src, dst]
            cycles = (
                path.cfo_normalized / SAMPLES_PER_SYMBOL
                + realization.tap_rotation_cycles
            )
            rot = None
            if cycles != 0.0:
                t = start + np.arange(n)
                rot = np.exp(2j * np.pi * cycles * t)
            for i in range(2):
                y = np.zeros(n, dtype=np.complex128)
                for j in range(2):
                    h = path.taps[i, j]
                    x = tx[src][j].samples
                    if h.size == 1:
                        y += h[0] * x
                    else:
                        y += np.convolve(x, h)[:n]
                if path.delay_samples:
                    d = min(path.delay_samples, n)
                    y = np.concatenate([np.zeros(d, dtype=np.complex128), y[: n - d]])
                acc[i] += y * rot if rot is not None else y
        sigma2 = realization.noise_power[dst]
        if sigma2 > 0.0:
            g = noise_streams[dst]
            s = np.sqrt(sigma2 / 2.0)
            for i in range(2):
                acc[i] += s * (g.standard_normal(n) + 1j * g.standard_normal(n))
        out[dst] = (
            SampleBlock(acc[0], rate, start),
            SampleBlock(acc[1], rate, start),
        )
    return out
