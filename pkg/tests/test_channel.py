"""Shared-medium tests: realization draws per profile, superposition and
noise injection in propagate, RNG stream isolation, and the calibration,
linearity, determinism, and gain-invariance properties."""

import numpy as np
import pytest

import meshradio.channel as channel_mod
from meshradio.channel import (
    FADING_DOMAIN,
    MAX_CFO_NORMALIZED,
    MULTIPATH_DELAY_SAMPLES,
    MULTIPATH_POWERS_DB,
    NOISE_DOMAIN,
    TAP_ROTATION_CYCLES_PER_SAMPLE,
    ChannelProfile,
    ChannelRealization,
    PairPath,
    make_noise_streams,
    make_realization,
    noise_power_for_snr,
    propagate,
    rng_stream,
)
from meshradio.dsp import SampleBlock
from meshradio.framing import DiversityMode, FrameDescriptor, Modulation
from meshradio.mesh import build_band_plan
from meshradio.modem import (
    CHAIN_DELAY,
    GUARD_SYMBOLS,
    SAMPLES_PER_SYMBOL,
    Channelizer,
    LinkReceiver,
    TxConfig,
    frame_geometry,
    tx_frame,
)
from meshradio.payload import counted_payload

PLAN = build_band_plan(1.0)
RATE = PLAN.composite_rate


def block(samples, start=0):
    return SampleBlock(np.asarray(samples, dtype=np.complex128), RATE, start)


def zeros_block(n, start=0):
    return block(np.zeros(n, dtype=np.complex128), start)


def single_pair_realization(taps, noise=0.0, delay=0, cfo=0.0, rotation=0.0):
    """Two-node medium with one explicit forward path and a silent return."""
    fwd = PairPath(taps=taps, delay_samples=delay, cfo_normalized=cfo)
    back = PairPath(taps=np.ones((2, 2, 1), dtype=np.complex128))
    return ChannelRealization(
        profile=ChannelProfile.IDEAL,
        pairs={(0, 1): fwd, (1, 0): back},
        noise_power={0: noise, 1: noise},
        tap_rotation_cycles=rotation,
    )


def frame_quantum(payload_bytes=4992, modulation=Modulation.QAM16):
    geo = frame_geometry(payload_bytes, modulation)
    return geo, (geo.frame_symbols + GUARD_SYMBOLS) * SAMPLES_PER_SYMBOL


def embedded_frame(desc, cfg, pos, quantum):
    """Frame waveform from both TX antennas placed at the head of a quantum."""
    payload = counted_payload(desc.src, desc.dst, desc.seq, desc.payload_bytes)
    a0, a1 = tx_frame(desc, payload, cfg, PLAN, pos)
    w0 = np.zeros(quantum, dtype=np.complex128)
    w1 = np.zeros(quantum, dtype=np.complex128)
    w0[: len(a0)] = a0.samples
    w1[: len(a1)] = a1.samples
    return block(w0, pos), block(w1, pos), payload


def run_frames_through(realization, streams, diversity, n_frames=1, band=1, snr_for_geo=None,
                       payload_bytes=4992, gain=1.0, src=0, dst=1):
    """Lead-in, n_frames quanta, and a flush quantum through one receiver."""
    geo, quantum = frame_quantum(payload_bytes)
    cfg = TxConfig(band_index=band, gain=gain, diversity=diversity)
    rx = LinkReceiver(src, dst, band, PLAN, expected_frame_symbols=geo.frame_symbols)
    events = []
    pos = 0

    def push(b0, b1):
        out = propagate({src: (b0, b1)}, realization, streams)
        return rx.push_quantum(*out[dst])

    events += push(zeros_block(8192, 0), zeros_block(8192, 0))
    pos = 8192
    sent = []
    for q in range(n_frames):
        desc = FrameDescriptor(src, dst, q, payload_bytes, Modulation.QAM16, diversity)
        b0, b1, payload = embedded_frame(desc, cfg, pos, quantum)
        sent.append(payload)
        events += push(b0, b1)
        pos += quantum
    events += push(zeros_block(quantum, pos), zeros_block(quantum, pos))
    return rx, events, sent


class TestRngStreams:
    def test_same_key_is_reproducible(self):
        a = rng_stream(7, NOISE_DOMAIN, 2).standard_normal(64)
        b = rng_stream(7, NOISE_DOMAIN, 2).standard_normal(64)
        assert np.array_equal(a, b)

    def test_distinct_indices_diverge(self):
        a = rng_stream(7, NOISE_DOMAIN, 0).standard_normal(64)
        b = rng_stream(7, NOISE_DOMAIN, 1).standard_normal(64)
        assert not np.allclose(a, b)

    def test_distinct_domains_diverge(self):
        a = rng_stream(7, NOISE_DOMAIN, 0).standard_normal(64)
        b = rng_stream(7, FADING_DOMAIN, 0).standard_normal(64)
        assert not np.allclose(a, b)


class TestValidation:
    def test_taps_shape_checked(self):
        with pytest.raises(ValueError, match="taps"):
            PairPath(taps=np.ones((2, 2, 0)))
        with pytest.raises(ValueError, match="taps"):
            PairPath(taps=np.ones((2, 3, 1)))
        with pytest.raises(ValueError, match="taps"):
            PairPath(taps=np.ones(5))

    def test_negative_delay_rejected(self):
        with pytest.raises(ValueError, match="delay"):
            PairPath(taps=np.ones((2, 2, 1)), delay_samples=-1)

    def test_nonfinite_cfo_rejected(self):
        with pytest.raises(ValueError, match="cfo"):
            PairPath(taps=np.ones((2, 2, 1)), cfo_normalized=np.nan)

    def test_self_path_rejected(self):
        path = PairPath(taps=np.ones((2, 2, 1)))
        with pytest.raises(ValueError, match="self-path"):
            ChannelRealization(
                profile=ChannelProfile.IDEAL,
                pairs={(1, 1): path},
                noise_power={1: 0.0},
            )

    def test_negative_noise_rejected(self):
        with pytest.raises(ValueError, match="noise"):
            ChannelRealization(
                profile=ChannelProfile.IDEAL, pairs={}, noise_power={0: -1e-9}
            )


class TestMakeRealization:
    def test_ideal_unit_taps_no_noise(self):
        real = make_realization(ChannelProfile.IDEAL, 28.0, seed=3)
        assert sorted(real.pairs) == [(s, d) for s in range(4) for d in range(4) if s != d]
        for path in real.pairs.values():
            assert np.array_equal(path.taps, np.ones((2, 2, 1)))
            assert path.delay_samples == 0 and path.cfo_normalized == 0.0
        assert all(v == 0.0 for v in real.noise_power.values())
        assert real.tap_rotation_cycles == 0.0

    def test_awgn_noise_level(self):
        real = make_realization(ChannelProfile.AWGN_ONLY, 28.0, seed=3)
        expected = noise_power_for_snr(28.0)
        assert all(v == expected for v in real.noise_power.values())
        for path in real.pairs.values():
            assert np.array_equal(path.taps, np.ones((2, 2, 1)))

    def test_multipath_tap_structure(self):
        real = make_realization(ChannelProfile.MULTIPATH_LIGHT, 25.0, seed=3)
        live = np.array(MULTIPATH_DELAY_SAMPLES)
        for path in real.pairs.values():
            assert path.taps.shape == (2, 2, live[-1] + 1)
            assert np.all(path.taps[:, :, live] != 0)
            silent = np.setdiff1d(np.arange(live[-1] + 1), live)
            assert np.all(path.taps[:, :, silent] == 0)
            assert path.cfo_normalized == 0.0
        assert all(v > 0 for v in real.noise_power.values())
        assert real.tap_rotation_cycles == 0.0

    def test_mobile_offsets(self):
        real = make_realization(ChannelProfile.MOBILE, 25.0, seed=3)
        cfos = [p.cfo_normalized for p in real.pairs.values()]
        assert all(abs(c) <= MAX_CFO_NORMALIZED for c in cfos)
        assert any(c != 0.0 for c in cfos)
        assert real.tap_rotation_cycles == TAP_ROTATION_CYCLES_PER_SAMPLE

    def test_ensemble_tap_powers_match_profile(self):
        # 25 seeds x 12 pairs x 4 antenna paths = 1200 draws per position
        sums = np.zeros(len(MULTIPATH_DELAY_SAMPLES))
        count = 0
        for seed in range(25):
            real = make_realization(ChannelProfile.MULTIPATH_LIGHT, 25.0, seed=seed)
            for path in real.pairs.values():
                g = path.taps[:, :, list(MULTIPATH_DELAY_SAMPLES)]
                sums += np.sum(np.abs(g) ** 2, axis=(0, 1))
                count += 4
        mean_db = 10 * np.log10(sums / count)
        for measured, nominal in zip(mean_db, MULTIPATH_POWERS_DB):
            assert abs(measured - nominal) < 0.5

    def test_override_scales_one_pair(self):
        real = make_realization(
            ChannelProfile.AWGN_ONLY, 28.0, seed=3, snr_overrides={(0, 1): 34.0}
        )
        boosted = np.sum(np.abs(real.pairs[0, 1].taps) ** 2)
        baseline = np.sum(np.abs(real.pairs[1, 0].taps) ** 2)
        ratio_db = 10 * np.log10(boosted / baseline)
        assert ratio_db == pytest.approx(6.0, abs=1e-9)
        assert real.noise_power[1] == noise_power_for_snr(28.0)

    def test_same_seed_same_draw(self):
        a = make_realization(ChannelProfile.MOBILE, 25.0, seed=11)
        b = make_realization(ChannelProfile.MOBILE, 25.0, seed=11)
        for key in a.pairs:
            assert np.array_equal(a.pairs[key].taps, b.pairs[key].taps)
            assert a.pairs[key].cfo_normalized == b.pairs[key].cfo_normalized

    def test_seeds_decorrelate_draws(self):
        a = make_realization(ChannelProfile.MULTIPATH_LIGHT, 25.0, seed=11)
        b = make_realization(ChannelProfile.MULTIPATH_LIGHT, 25.0, seed=12)
        assert not np.allclose(a.pairs[0, 1].taps, b.pairs[0, 1].taps)

    def test_profile_accepts_name_string(self):
        real = make_realization("AWGN_ONLY", 28.0, seed=3)
        assert real.profile is ChannelProfile.AWGN_ONLY


class TestPropagate:
    def test_ideal_pass_through_and_no_self_reception(self):
        real = make_realization(ChannelProfile.IDEAL, 28.0, seed=0)
        streams = make_noise_streams(0)
        rng = np.random.default_rng(5)
        x = rng.standard_normal(4096) + 1j * rng.standard_normal(4096)
        out = propagate({0: (block(x), zeros_block(4096))}, real, streams)
        for dst in (1, 2, 3):
            assert np.array_equal(out[dst][0].samples, x)
            assert np.array_equal(out[dst][1].samples, x)
        assert np.all(out[0][0].samples == 0) and np.all(out[0][1].samples == 0)

    def test_noise_only_power_calibrated(self):
        sigma2 = noise_power_for_snr(20.0)
        real = make_realization(ChannelProfile.AWGN_ONLY, 20.0, seed=2)
        streams = make_noise_streams(2)
        n = 250_000
        out = propagate({0: (zeros_block(n), zeros_block(n))}, real, streams)
        # 4 nodes x 2 antennas x 250k = 2e6 noise samples
        powers = [np.mean(np.abs(b.samples) ** 2) for pair in out.values() for b in pair]
        assert np.mean(powers) == pytest.approx(sigma2, rel=0.01)

    def test_two_band_leakage_through_channelizer(self):
        real = make_realization(ChannelProfile.IDEAL, 28.0, seed=0)
        geo, quantum = frame_quantum(1024)
        d02 = FrameDescriptor(0, 2, 0, 1024, Modulation.QAM16, DiversityMode.ALAMOUTI)
        b00, b01, _ = embedded_frame(d02, TxConfig(band_index=0), 0, quantum)
        # second transmitter: a unit tone at the adjacent band's center
        t = np.arange(quantum)
        tone = np.exp(2j * np.pi * PLAN.center_normalized(1) * t)
        both = propagate(
            {0: (b00, b01), 2: (block(tone), zeros_block(quantum))},
            real,
            make_noise_streams(0),
        )
        solo_frame = propagate({0: (b00, b01)}, real, make_noise_streams(0))
        solo_tone = propagate(
            {2: (block(tone), zeros_block(quantum))}, real, make_noise_streams(0)
        )

        def band_power(samples, band):
            z = Channelizer(band, PLAN).push(block(samples)).samples
            lo = CHAIN_DELAY
            hi = geo.frame_symbols * SAMPLES_PER_SYMBOL
            return float(np.mean(np.abs(z[lo:hi]) ** 2))

        # adjacent tone through the band-0 extractor: pure stopband rejection
        tone_leak = band_power(solo_tone[1][0].samples, 0)
        tone_ref = band_power(solo_tone[1][0].samples, 1)
        assert tone_leak / tone_ref < 1e-8
        # the modulated frame's own out-of-band skirts dominate two bands
        # away: shaping truncation leaves them near -60 dB, well below any
        # level that disturbs decoding but far above the filter stopband
        skirt = band_power(solo_frame[1][0].samples, 2)
        inband = band_power(solo_frame[1][0].samples, 0)
        assert skirt / inband < 3e-6
        # band-0 output power is unchanged by the neighbor
        p_with_neighbor = band_power(both[1][0].samples, 0)
        assert p_with_neighbor == pytest.approx(inband, rel=1e-3)

    def test_explicit_delay_shifts_output(self):
        taps = np.zeros((2, 2, 1), dtype=np.complex128)
        taps[0, 0, 0] = 1.0
        real = single_pair_realization(taps, delay=5)
        x = np.arange(1, 65, dtype=np.complex128)
        out = propagate({0: (block(x), zeros_block(64))}, real, make_noise_streams(0, 2))
        y = out[1][0].samples
        assert np.all(y[:5] == 0)
        assert np.array_equal(y[5:], x[:-5])

    def test_cfo_rotation_matches_model_and_is_continuous(self):
        taps = np.zeros((2, 2, 1), dtype=np.complex128)
        taps[0, 0, 0] = 1.0
        taps[1, 0, 0] = 1.0
        cfo = 0.5
        real = single_pair_realization(taps, cfo=cfo)
        rng = np.random.default_rng(9)
        x = rng.standard_normal(2048) + 1j * rng.standard_normal(2048)
        whole = propagate(
            {0: (block(x, 100), zeros_block(2048, 100))}, real, make_noise_streams(0, 2)
        )[1][0].samples
        t = 100 + np.arange(2048)
        expect = x * np.exp(2j * np.pi * (cfo / SAMPLES_PER_SYMBOL) * t)
        assert np.allclose(whole, expect, atol=1e-12)
        first = propagate(
            {0: (block(x[:1024], 100), zeros_block(1024, 100))},
            real,
            make_noise_streams(0, 2),
        )[1][0].samples
        second = propagate(
            {0: (block(x[1024:], 1124), zeros_block(1024, 1124))},
            real,
            make_noise_streams(0, 2),
        )[1][0].samples
        assert np.array_equal(np.concatenate([first, second]), whole)

    def test_span_mismatch_rejected(self):
        real = make_realization(ChannelProfile.IDEAL, 28.0, seed=0)
        streams = make_noise_streams(0)
        with pytest.raises(ValueError, match="share"):
            propagate(
                {0: (zeros_block(64, 0), zeros_block(64, 0)),
                 1: (zeros_block(64, 8), zeros_block(64, 8))},
                real,
                streams,
            )
        with pytest.raises(ValueError, match="share"):
            propagate(
                {0: (zeros_block(64), zeros_block(32))}, real, streams
            )
        with pytest.raises(ValueError, match="span"):
            propagate({}, real, streams)

    def test_missing_pair_rejected(self):
        real = single_pair_realization(np.ones((2, 2, 1), dtype=np.complex128))
        with pytest.raises(ValueError, match="no path"):
            propagate(
                {0: (zeros_block(16), zeros_block(16)),
                 2: (zeros_block(16), zeros_block(16))},
                real,
                make_noise_streams(0, 3) | {2: rng_stream(0, NOISE_DOMAIN, 2)},
            )


class TestInvariants:
    def test_linearity_with_noise_disabled(self):
        drawn = make_realization(ChannelProfile.MULTIPATH_LIGHT, 25.0, seed=4)
        real = ChannelRealization(
            profile=drawn.profile,
            pairs=drawn.pairs,
            noise_power={n: 0.0 for n in drawn.noise_power},
        )
        rng = np.random.default_rng(6)

        def draw(n):
            return rng.standard_normal(n) + 1j * rng.standard_normal(n)

        a = [draw(4096), draw(4096)]
        b = [draw(4096), draw(4096)]
        streams = make_noise_streams(0)

        def run(w0, w1):
            return propagate({0: (block(w0), block(w1))}, real, streams)

        out_a = run(a[0], a[1])
        out_b = run(b[0], b[1])
        out_sum = run(a[0] + b[0], a[1] + b[1])
        for dst in (1, 2, 3):
            for ant in (0, 1):
                lhs = out_sum[dst][ant].samples
                rhs = out_a[dst][ant].samples + out_b[dst][ant].samples
                assert np.allclose(lhs, rhs, atol=1e-9)

    def test_propagate_deterministic_bit_identical(self):
        real = make_realization(ChannelProfile.MOBILE, 20.0, seed=8)
        rng = np.random.default_rng(10)
        x = rng.standard_normal(8192) + 1j * rng.standard_normal(8192)
        runs = []
        for _ in range(2):
            out = propagate(
                {0: (block(x), block(x * 1j))}, real, make_noise_streams(8)
            )
            runs.append(out)
        for dst in range(4):
            for ant in (0, 1):
                assert np.array_equal(
                    runs[0][dst][ant].samples, runs[1][dst][ant].samples
                )

    def test_in_band_snr_matches_request(self):
        # same noise seed for the live and silent runs, so subtraction
        # recovers the exact signal and the exact noise separately
        snr_db = 20.0
        real = make_realization(ChannelProfile.AWGN_ONLY, snr_db, seed=13)
        geo, quantum = frame_quantum(4992)
        desc = FrameDescriptor(0, 1, 0, 4992, Modulation.QAM16, DiversityMode.ALAMOUTI)
        b0, b1, _ = embedded_frame(desc, TxConfig(band_index=1), 0, quantum)
        live = propagate({0: (b0, b1)}, real, make_noise_streams(13))
        silent = propagate(
            {0: (zeros_block(quantum), zeros_block(quantum))},
            real,
            make_noise_streams(13),
        )
        lo = CHAIN_DELAY + 4096
        hi = geo.frame_symbols * SAMPLES_PER_SYMBOL - 4096
        ratios = []
        for ant in (0, 1):
            noise = silent[1][ant].samples
            sig = live[1][ant].samples - noise
            zs = Channelizer(1, PLAN).push(block(sig)).samples
            zn = Channelizer(1, PLAN).push(block(noise)).samples
            p_sig = np.mean(np.abs(zs[lo:hi]) ** 2)
            p_noise = np.mean(np.abs(zn[lo:hi]) ** 2)
            ratios.append(10 * np.log10(p_sig / p_noise))
        for r in ratios:
            assert abs(r - snr_db) < 0.3

    def test_full_chain_gated_sinr_at_28db(self):
        real = make_realization(ChannelProfile.AWGN_ONLY, 28.0, seed=21)
        rx, events, _ = run_frames_through(
            real, make_noise_streams(21), DiversityMode.ALAMOUTI, n_frames=2
        )
        assert rx.stats.frames_crc_ok == 2
        assert rx.metrics(frames_sent=2).sinr_db == pytest.approx(28.0, abs=0.5)

    def test_gain_invariance_same_error_positions(self):
        # doubling TX amplitude and quadrupling noise power scales the
        # whole linear RX front end by an exact power of two, so decisions
        # and error positions cannot move
        snr_db = 14.0
        base = make_realization(ChannelProfile.AWGN_ONLY, snr_db, seed=17)
        loud = ChannelRealization(
            profile=base.profile,
            pairs=base.pairs,
            noise_power={n: 4.0 * v for n, v in base.noise_power.items()},
        )
        _, ev_a, sent = run_frames_through(
            base, make_noise_streams(17), DiversityMode.SINGLE_TX_MRC, gain=1.0
        )
        _, ev_b, _ = run_frames_through(
            loud, make_noise_streams(17), DiversityMode.SINGLE_TX_MRC, gain=2.0
        )
        assert len(ev_a) == len(ev_b) == 1
        assert ev_a[0].payload == ev_b[0].payload
        assert ev_a[0].bit_errors == ev_b[0].bit_errors > 0
        ref = np.frombuffer(sent[0], dtype=np.uint8)
        got_a = np.frombuffer(ev_a[0].payload, dtype=np.uint8)
        got_b = np.frombuffer(ev_b[0].payload, dtype=np.uint8)
        assert np.array_equal(np.nonzero(got_a != ref)[0], np.nonzero(got_b != ref)[0])
