"""Parametric link model: clipping, first-order low-pass, DC block, AWGN.

The cascade order is fixed (clip -> lowpass -> dc_block -> awgn) and recorded
in the output metadata.  Receiver gains are not modelled separately: the
demodulator's training-based gain correction absorbs any scalar.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, lfilter

from scapsim.signals import SampledSignal


@dataclass(frozen=True)
class ChannelConfig:
    """Channel stage parameters.

    lowpass_hz: 3 dB cutoff of the device low-pass (None disables).
    dc_block_hz: high-pass cutoff modelling AC coupling (0 disables).
    snr_db: per-sample SNR at the channel output; noise variance is the
        post-filter signal power divided by 10**(snr_db/10).  math.inf
        disables noise.
    clip: optional (lower, upper) hard amplitude bounds.
    seed: RNG seed for the noise stage.
    """

    lowpass_hz: float | None = None
    dc_block_hz: float = 0.0
    snr_db: float = math.inf
    clip: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.lowpass_hz is not None and self.lowpass_hz <= 0:
            raise ValueError("lowpass_hz must be positive (or None to disable)")
        if self.dc_block_hz < 0:
            raise ValueError("dc_block_hz must be >= 0 (0 disables)")
        if self.clip is not None:
            lo, hi = self.clip
            if not lo < hi:
                raise ValueError(f"clip bounds must satisfy lower < upper, got {self.clip}")


def rise_time_to_bandwidth(t_rise: float) -> float:
    """3 dB bandwidth from a 10-90% rise time, first-order rule f = 0.35 / t."""
    if t_rise <= 0:
        raise ValueError("rise time must be positive")
    return 0.35 / t_rise


def lowpass_first_order(signal: SampledSignal, f3db: float) -> SampledSignal:
    """Single-pole IIR low-pass via the bilinear transform, prewarped at f3db.

    DC gain is exactly 1 and the magnitude at f3db is exactly 1/sqrt(2).
    """
    if f3db <= 0:
        raise ValueError("f3db must be positive")
    if f3db >= signal.sample_rate / 2:
        raise ValueError(f"cutoff {f3db} Hz is at or above Nyquist "
                         f"({signal.sample_rate / 2} Hz)")
    b, a = butter(1, f3db, btype="low", fs=signal.sample_rate)
    out = lfilter(b, a, signal.samples)
    stages = signal.meta.get("channel_stages", []) + [f"lowpass:{f3db!r}"]
    return signal.replace(out, channel_stages=stages)


def dc_block(signal: SampledSignal, f_hp: float) -> SampledSignal:
    """Single-pole high-pass; DC gain 0, passband gain approaching 1.

    f_hp = 0 disables the stage and returns the signal unchanged.
    """
    if f_hp == 0:
        return signal
    if f_hp < 0:
        raise ValueError("f_hp must be >= 0")
    if f_hp >= signal.sample_rate / 2:
        raise ValueError(f"cutoff {f_hp} Hz is at or above Nyquist "
                         f"({signal.sample_rate / 2} Hz)")
    b, a = butter(1, f_hp, btype="high", fs=signal.sample_rate)
    out = lfilter(b, a, signal.samples)
    stages = signal.meta.get("channel_stages", []) + [f"dc_block:{f_hp!r}"]
    return signal.replace(out, channel_stages=stages)


def awgn(signal: SampledSignal, snr_db: float, seed: int) -> SampledSignal:
    """Add white Gaussian noise at the given per-sample SNR.

    The noise variance is the measured mean-square of the input divided by
    10**(snr_db/10); snr_db = math.inf disables the stage.  Deterministic in
    the seed.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return signal.replace(signal.samples.copy(),
                              channel_stages=signal.meta.get("channel_stages", []) + ["awgn:inf"])
    power = signal.mean_power()
    if power <= 0:
        raise ValueError("cannot set an SNR on a zero-power signal")
    sigma = np.sqrt(power / 10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    out = signal.samples + sigma * rng.standard_normal(len(signal))
    stages = signal.meta.get("channel_stages", []) + [f"awgn:{snr_db!r}:seed={seed}"]
    return signal.replace(out, channel_stages=stages)


def apply_channel(signal: SampledSignal, cfg: ChannelConfig) -> SampledSignal:
    """Run the fixed cascade clip -> lowpass -> dc_block -> awgn."""
    out = signal
    if cfg.clip is not None:
        lo, hi = cfg.clip
        clipped = np.clip(out.samples, lo, hi)
        out = out.replace(clipped,
                          channel_stages=out.meta.get("channel_stages", []) + [f"clip:{lo!r},{hi!r}"])
    if cfg.lowpass_hz is not None:
        out = lowpass_first_order(out, cfg.lowpass_hz)
    if cfg.dc_block_hz:
        out = dc_block(out, cfg.dc_block_hz)
    out = awgn(out, cfg.snr_db, cfg.seed)
    return out


def derive_seed(master_seed: int, *labels) -> int:
    """Split a master seed into an independent per-point seed.

    The rule is SHA-256 over "master|label1|label2|..." with each label
    rendered by repr(), truncated to 63 bits.  Distinct label tuples give
    statistically independent noise streams.
    """
    text = "|".join([repr(int(master_seed))] + [repr(l) for l in labels])
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1
