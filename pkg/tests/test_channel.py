import math

import numpy as np
import pytest

from scapsim.channel import (ChannelConfig, apply_channel, awgn, dc_block,
                             derive_seed, lowpass_first_order,
                             rise_time_to_bandwidth)
from scapsim.signals import SampledSignal

FS = 1e7


def sine(freq, n=200_000, fs=FS, amplitude=1.0):
    t = np.arange(n) / fs
    return SampledSignal(amplitude * np.sin(2 * np.pi * freq * t), fs)


def steady_amplitude(signal):
    tail = signal.samples[len(signal) // 2 :]
    return float(np.sqrt(2.0 * np.mean(tail**2)))


class TestRiseTime:
    def test_pled_rise_time_gives_roughly_500_khz(self):
        f = rise_time_to_bandwidth(694e-9)
        assert f == pytest.approx(0.35 / 694e-9)
        assert 4.9e5 < f < 5.1e5  # consistent with the ~500 kHz device estimate

    def test_round_number(self):
        assert rise_time_to_bandwidth(350e-9) == pytest.approx(1e6)

    def test_unit_sanity(self):
        assert rise_time_to_bandwidth(0.35) == pytest.approx(1.0)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            rise_time_to_bandwidth(0.0)


class TestLowpass:
    def test_dc_gain_unity(self):
        const = SampledSignal(np.full(50_000, 3.7), FS)
        out = lowpass_first_order(const, 1e5)
        assert out.samples[-1] == pytest.approx(3.7, rel=1e-6)

    def test_minus_3db_at_cutoff(self):
        out = lowpass_first_order(sine(2e5), 2e5)
        assert steady_amplitude(out) == pytest.approx(1 / np.sqrt(2), rel=0.01)

    def test_one_decade_above_cutoff(self):
        # first-order magnitude oracle: 1 / sqrt(1 + (f/f3db)^2)
        out = lowpass_first_order(sine(2e6), 2e5)
        assert steady_amplitude(out) == pytest.approx(1 / np.sqrt(101), rel=0.10)

    def test_cutoff_above_nyquist_rejected(self):
        with pytest.raises(ValueError):
            lowpass_first_order(sine(1e5), FS / 2)

    def test_linearity(self):
        a, b = sine(1.1e5), sine(3.3e5)
        combined = SampledSignal(a.samples + b.samples, FS)
        separate = (lowpass_first_order(a, 2e5).samples
                    + lowpass_first_order(b, 2e5).samples)
        np.testing.assert_allclose(lowpass_first_order(combined, 2e5).samples,
                                   separate, rtol=0, atol=1e-12)


class TestDcBlock:
    def test_constant_decays_to_zero(self):
        const = SampledSignal(np.ones(200_000), FS)
        out = dc_block(const, 1e4)
        assert abs(out.samples[-1]) < 1e-3

    def test_passband_gain_near_unity(self):
        out = dc_block(sine(1e6), 1e4)
        assert steady_amplitude(out) >= 0.999

    def test_zero_cutoff_is_identity(self):
        sig = sine(1e5)
        out = dc_block(sig, 0.0)
        assert out is sig

    def test_cutoff_above_nyquist_rejected(self):
        with pytest.raises(ValueError):
            dc_block(sine(1e5), FS)


class TestAwgn:
    def test_variance_within_two_percent(self):
        sig = SampledSignal(np.ones(1_000_000), FS)
        out = awgn(sig, 10.0, seed=123)
        noise = out.samples - sig.samples
        target = 10 ** (-10.0 / 10.0)
        assert np.var(noise) == pytest.approx(target, rel=0.02)

    def test_infinite_snr_is_identity(self):
        sig = sine(1e5, n=1000)
        out = awgn(sig, math.inf, seed=1)
        np.testing.assert_array_equal(out.samples, sig.samples)

    def test_deterministic_per_seed(self):
        sig = sine(1e5, n=1000)
        a = awgn(sig, 15.0, seed=77)
        b = awgn(sig, 15.0, seed=77)
        assert np.array_equal(a.samples, b.samples)
        c = awgn(sig, 15.0, seed=78)
        assert not np.array_equal(a.samples, c.samples)

    def test_zero_power_rejected(self):
        with pytest.raises(ValueError):
            awgn(SampledSignal(np.zeros(100), FS), 10.0, seed=1)


class TestApplyChannel:
    def test_neutral_config_is_identity(self):
        sig = sine(1e5, n=5000)
        out = apply_channel(sig, ChannelConfig())
        np.testing.assert_array_equal(out.samples, sig.samples)

    def test_stage_order_recorded(self):
        sig = sine(1e5, n=5000)
        cfg = ChannelConfig(lowpass_hz=5e5, dc_block_hz=1e3, snr_db=20.0,
                            clip=(-0.5, 0.5), seed=3)
        out = apply_channel(sig, cfg)
        kinds = [s.split(":")[0] for s in out.meta["channel_stages"]]
        assert kinds == ["clip", "lowpass", "dc_block", "awgn"]

    def test_clip_bounds_applied(self):
        sig = sine(1e5, n=5000, amplitude=2.0)
        out = apply_channel(sig, ChannelConfig(clip=(-1.0, 1.0)))
        assert out.samples.max() <= 1.0
        assert out.samples.min() >= -1.0

    def test_invalid_clip_rejected(self):
        with pytest.raises(ValueError):
            ChannelConfig(clip=(1.0, -1.0))


class TestSeedSplitting:
    def test_deterministic(self):
        assert derive_seed(1, "scap", 0) == derive_seed(1, "scap", 0)

    def test_distinct_labels_distinct_seeds(self):
        seeds = {derive_seed(1, fmt, k) for fmt in ("scap", "mcap") for k in range(50)}
        assert len(seeds) == 100

    def test_derived_streams_uncorrelated(self):
        n = 100_000
        sig = SampledSignal(np.ones(n), FS)
        a = awgn(sig, 0.0, derive_seed(9, "a")).samples - 1.0
        b = awgn(sig, 0.0, derive_seed(9, "b")).samples - 1.0
        rho = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
        assert abs(rho) <= 3.0 / np.sqrt(n)
