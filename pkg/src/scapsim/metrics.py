"""Link-quality metrics: bit-by-bit BER, threshold rate extraction, eye and PSD."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import welch
from scipy.special import erfc, erfcinv, ndtri

from scapsim.modems import as_bit_array
from scapsim.signals import SampledSignal

FEC_THRESHOLD = 3.8e-3  # pre-correction BER at which a 7% FEC yields quasi-error-free output
ERROR_FREE_THRESHOLD = 1e-6

_Z95 = float(ndtri(0.975))

POINTS_CSV_HEADER = ("format,subband,symbol_rate_hz,bits_per_symbol,snr_db,"
                     "bits_sent,bit_errors,ber,ci_low,ci_high")
RATE_CSV_HEADER = "format,threshold,rate_bps_gross,rate_bps_net,status"


def q_function(x):
    """Gaussian tail probability Q(x) = 0.5 * erfc(x / sqrt(2))."""
    return 0.5 * erfc(np.asarray(x, dtype=np.float64) / np.sqrt(2.0))


def q_function_inverse(p):
    return np.sqrt(2.0) * erfcinv(2.0 * np.asarray(p, dtype=np.float64))


def wilson_interval(errors: int, n: int, z: float = _Z95) -> tuple:
    """Wilson 95% score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("need at least one trial")
    p = errors / n
    denom = 1.0 + z**2 / n
    center = (p + z**2 / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class BerRecord:
    bits_sent: int
    bit_errors: int
    ber: float
    ci_low: float
    ci_high: float

    @classmethod
    def from_counts(cls, errors: int, bits: int) -> "BerRecord":
        if not 0 <= errors <= bits:
            raise ValueError(f"need 0 <= errors <= bits, got {errors}/{bits}")
        low, high = wilson_interval(errors, bits)
        return cls(bits_sent=bits, bit_errors=errors, ber=errors / bits,
                   ci_low=low, ci_high=high)


def ber(tx, rx) -> BerRecord:
    """Exact Hamming-distance BER between two equal-length bit streams."""
    a = as_bit_array(tx)
    b = as_bit_array(rx)
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)} bits")
    errors = int(np.count_nonzero(a != b))
    return BerRecord.from_counts(errors, len(a))


def aggregate_ber(per_band) -> BerRecord:
    """Pool errors and bits across sub-bands."""
    records = list(per_band)
    if not records:
        raise ValueError("need at least one record")
    errors = sum(r.bit_errors for r in records)
    bits = sum(r.bits_sent for r in records)
    return BerRecord.from_counts(errors, bits)


@dataclass(frozen=True)
class PointRecord:
    """One (format, sub-band, rate, SNR) measurement."""

    format: str
    subband: str  # "1", "2", ... or "aggregate"
    symbol_rate_hz: float
    bits_per_symbol: int
    snr_db: float
    counts: BerRecord

    @property
    def rate_bps(self) -> float:
        return self.symbol_rate_hz * self.bits_per_symbol

    def csv_row(self) -> str:
        c = self.counts
        return ",".join([
            self.format, self.subband, repr(self.symbol_rate_hz),
            str(self.bits_per_symbol), repr(self.snr_db), str(c.bits_sent),
            str(c.bit_errors), repr(c.ber), repr(c.ci_low), repr(c.ci_high),
        ])


@dataclass
class SweepResult:
    """All measurements of a sweep plus the reporting thresholds."""

    records: list = field(default_factory=list)
    net_fraction: float = 1.0  # payload / (payload + training), for net-rate reporting
    thresholds: tuple = (FEC_THRESHOLD, ERROR_FREE_THRESHOLD)

    def series(self, fmt: str, subband: str = "aggregate") -> list:
        pts = [r for r in self.records if r.format == fmt and r.subband == subband]
        return sorted(pts, key=lambda r: r.rate_bps)

    def merge(self, other: "SweepResult") -> "SweepResult":
        return SweepResult(self.records + other.records, self.net_fraction, self.thresholds)


@dataclass(frozen=True)
class RateCrossing:
    status: str  # "crossed" | "not_reached_above" | "not_reached_below"
    rate_bps: float | None
    max_tested_bps: float


def rate_at_threshold(points, threshold: float) -> RateCrossing:
    """Log-linear interpolation of a BER-vs-rate series at a threshold.

    points is a sequence of (rate_bps, BerRecord); the crossing is the
    highest-rate adjacent pair whose BERs straddle the threshold, which makes
    the returned rate monotone non-decreasing in the threshold.  Zero-error
    points enter the log interpolation at the resolution floor
    1 / (2 * bits_sent).  A series entirely below (above) the threshold
    yields "not_reached_above" ("not_reached_below"), never extrapolation.
    """
    pts = sorted(points, key=lambda p: p[0])
    if not pts:
        raise ValueError("empty series")
    max_rate = pts[-1][0]

    def floored(rec: BerRecord) -> float:
        return rec.ber if rec.ber > 0 else 0.5 / rec.bits_sent

    crossing = None
    for (r0, c0), (r1, c1) in zip(pts, pts[1:]):
        if c0.ber <= threshold < c1.ber:
            crossing = (r0, floored(c0), r1, floored(c1))
    if crossing is None:
        if pts[-1][1].ber <= threshold:
            return RateCrossing("not_reached_above", None, max_rate)
        return RateCrossing("not_reached_below", None, max_rate)
    r0, b0, r1, b1 = crossing
    t = (np.log(threshold) - np.log(b0)) / (np.log(b1) - np.log(b0))
    return RateCrossing("crossed", float(r0 + t * (r1 - r0)), max_rate)


@dataclass(frozen=True)
class RateSummary:
    format: str
    threshold: float
    rate_bps_gross: float | None
    rate_bps_net: float | None
    status: str

    def csv_row(self) -> str:
        gross = "" if self.rate_bps_gross is None else repr(self.rate_bps_gross)
        net = "" if self.rate_bps_net is None else repr(self.rate_bps_net)
        return ",".join([self.format, repr(self.threshold), gross, net, self.status])


def achievable_rate(sweep: SweepResult, fmt: str, threshold: float,
                    subband: str = "aggregate") -> RateSummary:
    """Threshold-crossing rate for one format's series, gross and net of training."""
    series = [(r.rate_bps, r.counts) for r in sweep.series(fmt, subband)]
    crossing = rate_at_threshold(series, threshold)
    if crossing.status != "crossed":
        return RateSummary(fmt, threshold, None, None, crossing.status)
    return RateSummary(fmt, threshold, crossing.rate_bps,
                       crossing.rate_bps * sweep.net_fraction, "crossed")


def eye_data(signal, sps: int, offset: int = 0) -> np.ndarray:
    """Two-symbol-wide traces aligned to the sampling phase, one per row."""
    x = signal.samples if isinstance(signal, SampledSignal) else np.asarray(signal)
    if offset < 0:
        raise ValueError("offset must be >= 0")
    width = 2 * sps
    n_traces = (len(x) - offset - width) // sps + 1 if len(x) - offset >= width else 0
    if n_traces < 1:
        raise ValueError("signal too short for a single eye trace")
    return np.stack([x[offset + k * sps : offset + k * sps + width] for k in range(n_traces)])


def psd(signal: SampledSignal, segment_len: int = 1024):
    """Welch averaged periodogram, one-sided, power-density normalized.

    Integrating the returned density over frequency recovers the signal's
    time-domain mean square (detrending is off so DC content is kept).
    """
    if len(signal) < segment_len:
        raise ValueError(f"signal shorter than one segment ({len(signal)} < {segment_len})")
    freqs, pxx = welch(signal.samples, fs=signal.sample_rate, nperseg=segment_len,
                       detrend=False)
    return freqs, pxx


def write_points_csv(records, path) -> None:
    lines = [POINTS_CSV_HEADER] + [r.csv_row() for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def write_rate_summary_csv(summaries, path) -> None:
    lines = [RATE_CSV_HEADER] + [s.csv_row() for s in summaries]
    Path(path).write_text("\n".join(lines) + "\n")
