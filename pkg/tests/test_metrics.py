import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.signal import oaconvolve

from scapsim.filters import FilterSpec, make_rrc
from scapsim.metrics import (FEC_THRESHOLD, BerRecord, PointRecord, SweepResult,
                             achievable_rate, aggregate_ber, ber, eye_data, psd,
                             q_function, rate_at_threshold, wilson_interval)
from scapsim.modems import pam_map, prbs15, upsample_zero_pad
from scapsim.signals import SampledSignal


def record(ber_value, bits):
    return BerRecord.from_counts(int(round(ber_value * bits)), bits)


class TestBer:
    def test_identical_streams(self):
        bits = prbs15(3, 1000).bits
        rec = ber(bits, bits)
        assert rec.ber == 0.0 and rec.bit_errors == 0

    def test_complemented_streams(self):
        bits = prbs15(3, 1000).bits
        rec = ber(bits, 1 - bits)
        assert rec.ber == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ber([0, 1], [0, 1, 1])

    def test_two_pam_over_awgn_matches_q_function(self):
        # Monte-Carlo vs the Q(sqrt(2 Eb/N0)) oracle at Eb/N0 = 6 dB
        from scapsim.harness import run_awgn_calibration
        (_, rec), = run_awgn_calibration((6.0,), n_bits=200_000, master_seed=5)
        theory = float(q_function(math.sqrt(2.0 * 10**0.6)))
        assert theory == pytest.approx(2.4e-3, rel=0.05)
        assert rec.ci_low <= theory <= rec.ci_high


class TestWilson:
    def test_zero_errors_lower_bound(self):
        rec = BerRecord.from_counts(0, 1000)
        assert rec.ci_low == 0.0
        assert rec.ci_high > 0.0

    @pytest.mark.parametrize("errors,n", [(5, 100), (1, 1000), (380, 100_000)])
    def test_matches_quadratic_root_oracle(self, errors, n):
        # Wilson bounds are the roots of (p_hat - p)^2 = z^2 p (1 - p) / n
        z = 1.959963984540054
        p_hat = errors / n

        def g(p):
            return (p_hat - p) ** 2 - z**2 * p * (1 - p) / n

        lo, hi = wilson_interval(errors, n)
        root_lo = brentq(g, 0.0, p_hat) if errors else 0.0
        root_hi = brentq(g, p_hat, 1.0)
        assert lo == pytest.approx(root_lo, abs=1e-12)
        assert hi == pytest.approx(root_hi, abs=1e-12)


class TestAggregate:
    def test_quoted_arithmetic(self):
        bands = [BerRecord.from_counts(1, 1000), BerRecord.from_counts(3, 1000)]
        assert aggregate_ber(bands).ber == pytest.approx(2e-3)

    def test_single_band_identity(self):
        rec = BerRecord.from_counts(7, 999)
        agg = aggregate_ber([rec])
        assert agg.ber == rec.ber and agg.bits_sent == rec.bits_sent

    def test_all_error_free(self):
        assert aggregate_ber([BerRecord.from_counts(0, 10)] * 3).ber == 0.0

    @given(st.lists(st.tuples(st.integers(0, 50), st.integers(50, 500)),
                    min_size=1, max_size=6))
    @settings(max_examples=50, deadline=None)
    def test_equals_ber_of_concatenated_streams(self, cases):
        rng = np.random.default_rng(0)
        tx_parts, rx_parts, records = [], [], []
        for errors, n in cases:
            tx = rng.integers(0, 2, n).astype(np.uint8)
            rx = tx.copy()
            flip = rng.choice(n, size=errors, replace=False)
            rx[flip] ^= 1
            tx_parts.append(tx)
            rx_parts.append(rx)
            records.append(ber(tx, rx))
        pooled = aggregate_ber(records)
        direct = ber(np.concatenate(tx_parts), np.concatenate(rx_parts))
        assert pooled == direct


class TestRateAtThreshold:
    def test_closed_form_interpolation(self):
        pts = [(1e6, record(1e-5, 10**7)), (2e6, record(1e-2, 10**7))]
        crossing = rate_at_threshold(pts, 3.8e-3)
        expected = 1e6 + 1e6 * (math.log(3.8e-3) - math.log(1e-5)) / (
            math.log(1e-2) - math.log(1e-5))
        assert crossing.status == "crossed"
        assert 1e6 < crossing.rate_bps < 2e6
        assert crossing.rate_bps == pytest.approx(expected, rel=1e-9)

    def test_monotone_in_threshold(self):
        pts = [(1e6, record(1e-5, 10**7)), (2e6, record(1e-2, 10**7))]
        r1 = rate_at_threshold(pts, 1e-3).rate_bps
        r2 = rate_at_threshold(pts, 3.8e-3).rate_bps
        assert r1 <= r2

    def test_monotone_on_nonmonotone_series(self):
        bers = [1e-6, 1e-4, 5e-5, 2e-3, 8e-2]
        pts = [((i + 1) * 1e6, record(b, 10**7)) for i, b in enumerate(bers)]
        thresholds = np.geomspace(2e-6, 5e-2, 40)
        rates = []
        for thr in thresholds:
            c = rate_at_threshold(pts, thr)
            rates.append(c.rate_bps if c.status == "crossed" else np.inf)
        assert all(a <= b + 1e-9 for a, b in zip(rates, rates[1:]))

    def test_entirely_below_threshold(self):
        pts = [(1e6, record(0.0, 10**6)), (2e6, record(1e-5, 10**6))]
        crossing = rate_at_threshold(pts, 3.8e-3)
        assert crossing.status == "not_reached_above"
        assert crossing.rate_bps is None
        assert crossing.max_tested_bps == 2e6

    def test_entirely_above_threshold(self):
        pts = [(1e6, record(0.1, 10**6)), (2e6, record(0.2, 10**6))]
        assert rate_at_threshold(pts, 3.8e-3).status == "not_reached_below"

    def test_paper_style_aggregate_fixture(self):
        # digitized comparison-curve anchors: ~3.75 Mb/s at 1e-6 and
        # ~6.2 Mb/s at the 3.8e-3 FEC threshold
        pts = [(2.0e6, record(1e-8, 10**9)),
               (3.75e6, record(1e-6, 10**9)),
               (6.2e6, record(3.8e-3, 10**9)),
               (8.0e6, record(5e-2, 10**9))]
        fec = rate_at_threshold(pts, FEC_THRESHOLD)
        assert fec.rate_bps == pytest.approx(6.2e6, rel=1e-6)
        uncoded = rate_at_threshold(pts, 1e-6)
        assert uncoded.rate_bps == pytest.approx(3.75e6, rel=1e-6)


class TestAchievableRate:
    @staticmethod
    def sweep_with(bers, fmt="scap"):
        recs = [PointRecord(fmt, "aggregate", (i + 1) * 1e6, 1, 13.0, record(b, 10**6))
                for i, b in enumerate(bers)]
        return SweepResult(recs, net_fraction=0.97)

    def test_gross_and_net(self):
        sweep = self.sweep_with([1e-5, 1e-2])
        summary = achievable_rate(sweep, "scap", 3.8e-3)
        assert summary.status == "crossed"
        assert summary.rate_bps_net == pytest.approx(summary.rate_bps_gross * 0.97)

    def test_not_reached_has_no_rate(self):
        sweep = self.sweep_with([1e-5, 1e-4])
        summary = achievable_rate(sweep, "scap", 3.8e-3)
        assert summary.status == "not_reached_above"
        assert summary.rate_bps_gross is None


class TestEye:
    def test_clean_two_pam_eye_is_open(self):
        spec = FilterSpec(1.0, 1e-6, span=16)
        taps = make_rrc(spec)
        taps = taps / np.sqrt(np.dot(taps, taps))
        sps = spec.samples_per_symbol
        symbols = pam_map(prbs15(11, 4000).bits, 2)
        shaped = oaconvolve(upsample_zero_pad(symbols, sps), taps)
        matched = oaconvolve(shaped, taps[::-1])
        offset = (len(taps) - 1) % sps
        traces = eye_data(matched, sps, offset)[10:-10]
        column = traces[:, sps]  # a sampling instant sits at this column
        positive, negative = column[column > 0], column[column < 0]
        assert len(positive) and len(negative)
        assert positive.min() - negative.max() > 1.0  # open eye

    def test_trace_shape(self):
        traces = eye_data(np.arange(100.0), 10, 0)
        assert traces.shape[1] == 20

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            eye_data(np.arange(5.0), 10, 0)


class TestPsd:
    def test_sine_peak_and_power(self):
        fs, f0 = 1e6, 1.25e5
        t = np.arange(1 << 17) / fs
        sig = SampledSignal(np.sin(2 * np.pi * f0 * t), fs)
        freqs, pxx = psd(sig, segment_len=2048)
        assert freqs[np.argmax(pxx)] == pytest.approx(f0, rel=0.01)
        total = np.sum(pxx) * (freqs[1] - freqs[0])
        assert total == pytest.approx(0.5, rel=0.01)

    def test_white_noise_power_normalization(self):
        rng = np.random.default_rng(8)
        sig = SampledSignal(rng.standard_normal(1 << 18), 1e6)
        freqs, pxx = psd(sig, segment_len=1024)
        total = np.sum(pxx) * (freqs[1] - freqs[0])
        assert abs(total - sig.mean_power()) / sig.mean_power() <= 0.01

    def test_dc_content_retained(self):
        sig = SampledSignal(np.full(1 << 14, 2.0), 1e6)
        freqs, pxx = psd(sig, segment_len=512)
        total = np.sum(pxx) * (freqs[1] - freqs[0])
        assert total == pytest.approx(4.0, rel=0.01)

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            psd(SampledSignal(np.ones(100), 1e6), segment_len=1024)
