"""Bit-to-waveform modems: staggered CAP, multi-band CAP and pulse-shaped OOK.

The transmit chain per branch is map -> prepend training -> zero-pad
up-sample -> pulse shape -> apply half-symbol stagger, after which branches
are summed and the composite is normalized to unit average electrical power.
The receive chain is matched filtering, per-branch delay compensation so one
sampling clock serves all branches, symbol-rate down-sampling, training-based
common phase/gain correction and de-mapping.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.signal import oaconvolve

from scapsim.filters import FilterBank, normalize_bank
from scapsim.signals import SampledSignal

PRBS15_PERIOD = 2**15 - 1
DEFAULT_TRAINING_SEED = 0x4D35
MIN_TRAINING = 16


@dataclass
class BitStream:
    """An ordered 0/1 sequence tagged with where it came from."""

    bits: np.ndarray
    origin: str = "explicit"  # "prbs" | "file" | "explicit"

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 1:
            raise ValueError("bits must be one-dimensional")
        if np.any(self.bits > 1):
            raise ValueError("bits must be 0 or 1")

    def __len__(self):
        return len(self.bits)


def as_bit_array(bits) -> np.ndarray:
    if isinstance(bits, BitStream):
        return bits.bits
    out = np.asarray(bits, dtype=np.uint8)
    if out.ndim != 1 or np.any(out > 1):
        raise ValueError("bits must be a one-dimensional 0/1 sequence")
    return out


@lru_cache(maxsize=256)
def _prbs15_period(seed: int) -> np.ndarray:
    state = seed
    period = np.empty(PRBS15_PERIOD, dtype=np.uint8)
    for i in range(PRBS15_PERIOD):
        bit = ((state >> 14) ^ (state >> 13)) & 1
        state = ((state << 1) | bit) & 0x7FFF
        period[i] = bit
    period.setflags(write=False)
    return period


def prbs15(seed: int, length: int) -> BitStream:
    """Maximal-length LFSR sequence, polynomial x^15 + x^14 + 1, period 32767.

    Deterministic in the 15-bit nonzero seed; streams longer than one period
    repeat it.
    """
    if not 0 < seed < 2**15:
        raise ValueError(f"seed must be a nonzero 15-bit integer, got {seed}")
    if length < 0:
        raise ValueError("length must be >= 0")
    if length == 0:
        return BitStream(np.empty(0, dtype=np.uint8), origin="prbs")
    period = _prbs15_period(seed)
    reps = -(-length // PRBS15_PERIOD)
    return BitStream(np.tile(period, reps)[:length], origin="prbs")


def _gray(i: np.ndarray) -> np.ndarray:
    return i ^ (i >> 1)


def _gray_inverse(g: np.ndarray) -> np.ndarray:
    i = g.copy()
    shift = 1
    while True:
        shifted = i >> shift
        if not np.any(shifted):
            break
        i ^= shifted
        shift *= 2
    return i


def _check_levels(levels: int):
    if levels < 2 or levels & (levels - 1):
        raise ValueError(f"levels must be a power of two >= 2, got {levels}")


def pam_level_scale(levels: int) -> float:
    """RMS of the unnormalized alphabet {-(M-1), ..., M-1}: sqrt((M^2 - 1) / 3)."""
    return np.sqrt((levels**2 - 1) / 3.0)


def pam_map(bits, levels: int) -> np.ndarray:
    """Gray-mapped, zero-mean, unit-average-power PAM symbols.

    For levels=2 this is the antipodal map {0, 1} -> {-1, +1}.  The bit count
    must divide evenly into log2(levels)-bit groups; no silent padding.
    """
    _check_levels(levels)
    b = as_bit_array(bits)
    k = levels.bit_length() - 1
    if len(b) % k:
        raise ValueError(f"bit count {len(b)} not divisible by log2(levels) = {k}")
    groups = b.reshape(-1, k).astype(np.int64)
    value = np.zeros(len(groups), dtype=np.int64)
    for col in range(k):  # MSB first
        value = (value << 1) | groups[:, col]
    index = _gray_inverse(value)
    return (2.0 * index - (levels - 1)) / pam_level_scale(levels)


def pam_demap(symbols, levels: int) -> np.ndarray:
    """Nearest-level decision and Gray label recovery; inverse of pam_map."""
    _check_levels(levels)
    y = np.real(np.asarray(symbols, dtype=np.float64))
    k = levels.bit_length() - 1
    index = np.clip(np.rint((y * pam_level_scale(levels) + levels - 1) / 2.0), 0, levels - 1)
    value = _gray(index.astype(np.int64))
    bits = np.empty((len(value), k), dtype=np.uint8)
    for col in range(k):
        bits[:, col] = (value >> (k - 1 - col)) & 1
    return bits.reshape(-1)


OOK_LEVELS = (0.0, 2.0)  # unipolar pre-normalization; an LED cannot emit negative light


def ook_map(bits) -> np.ndarray:
    return 2.0 * as_bit_array(bits).astype(np.float64)


def ook_demap(symbols) -> np.ndarray:
    y = np.real(np.asarray(symbols, dtype=np.float64))
    return (y > 1.0).astype(np.uint8)


def upsample_zero_pad(symbols, sps: int) -> np.ndarray:
    """Insert sps - 1 zeros after each symbol."""
    if sps < 1:
        raise ValueError("sps must be >= 1")
    symbols = np.asarray(symbols, dtype=np.float64)
    out = np.zeros(len(symbols) * sps)
    out[::sps] = symbols
    return out


@dataclass
class ModemConfig:
    """Which format to run, at what rate, over which filter bank.

    levels_per_band has one PAM alphabet size per sub-band (OOK: one entry,
    fixed at 2).  stagger overrides the bank's calibrated map when given;
    entries are per-branch delays in samples, multiples of half a symbol.
    """

    format: str
    symbol_rate: float
    bank: FilterBank
    levels_per_band: tuple = ()
    training_len: int = 512
    training_seed: int = DEFAULT_TRAINING_SEED
    stagger: dict | None = None

    def __post_init__(self):
        if self.format not in ("scap", "mcap", "ook"):
            raise ValueError(f"unknown format {self.format!r}")
        if self.bank.kind != self.format:
            raise ValueError(f"bank kind {self.bank.kind!r} does not match format {self.format!r}")
        if self.symbol_rate <= 0:
            raise ValueError("symbol_rate must be positive")
        if abs(self.bank.spec.symbol_period * self.symbol_rate - 1.0) > 1e-9:
            raise ValueError("bank symbol_period is inconsistent with symbol_rate")
        if not self.levels_per_band:
            self.levels_per_band = tuple(2 for _ in range(self.n_bands))
        self.levels_per_band = tuple(int(m) for m in self.levels_per_band)
        if len(self.levels_per_band) != self.n_bands:
            raise ValueError(
                f"levels_per_band needs {self.n_bands} entries, got {len(self.levels_per_band)}"
            )
        for m in self.levels_per_band:
            _check_levels(m)
        if self.format == "ook" and self.levels_per_band != (2,):
            raise ValueError("OOK is binary; levels_per_band must be (2,)")
        if self.training_len < 0 or (0 < self.training_len < MIN_TRAINING):
            raise ValueError(f"training_len must be 0 or >= {MIN_TRAINING}")
        sps = self.bank.spec.samples_per_symbol
        if sps % 2:
            raise ValueError("samples per symbol must be even so T/2 is a whole sample count")
        for s in self.stagger_samples():
            if s % (sps // 2):
                raise ValueError("stagger entries must be multiples of half a symbol")

    @property
    def n_bands(self) -> int:
        if self.format == "scap":
            return 4
        if self.format == "mcap":
            return self.bank.n_branches // 2
        return 1

    @property
    def sample_rate(self) -> float:
        return self.symbol_rate * self.bank.spec.samples_per_symbol

    def stagger_samples(self) -> np.ndarray:
        if self.stagger is not None:
            return np.array([self.stagger.get(n, 0) for n in self.bank.names], dtype=int)
        return self.bank.stagger_samples()

    def band_branches(self, band: int) -> tuple:
        """Branch indices feeding sub-band `band` (0-based)."""
        if self.format == "mcap":
            return (2 * band, 2 * band + 1)
        return (band,)

    def bits_per_band_symbol(self, band: int) -> int:
        k = self.levels_per_band[band].bit_length() - 1
        return 2 * k if self.format == "mcap" else k

    def total_bits_per_symbol(self) -> int:
        return sum(self.bits_per_band_symbol(b) for b in range(self.n_bands))

    def digest(self) -> str:
        doc = {
            "format": self.format,
            "symbol_rate": repr(self.symbol_rate),
            "levels_per_band": list(self.levels_per_band),
            "training_len": self.training_len,
            "training_seed": self.training_seed,
            "beta": repr(self.bank.spec.beta),
            "oversampling": self.bank.spec.oversampling,
            "span": self.bank.spec.span,
            "n_branches": self.bank.n_branches,
            "stagger": [int(s) for s in self.stagger_samples()],
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _band_training_seed(cfg: ModemConfig, band: int) -> int:
    # distinct per-band phases of the m-sequence keep training prefixes uncorrelated
    return (cfg.training_seed - 1 + 977 * band) % PRBS15_PERIOD + 1


def band_symbols_from_bits(cfg: ModemConfig, band: int, bits) -> np.ndarray:
    """Map a band's bits to its symbol stream (complex I+jQ for mcap)."""
    levels = cfg.levels_per_band[band]
    b = as_bit_array(bits)
    if cfg.format == "ook":
        return ook_map(b)
    if cfg.format == "scap":
        return pam_map(b, levels)
    k = levels.bit_length() - 1
    if len(b) % (2 * k):
        raise ValueError(f"band {band}: bit count {len(b)} not divisible by {2 * k}")
    groups = b.reshape(-1, 2 * k)
    i_sym = pam_map(groups[:, :k].reshape(-1), levels)
    q_sym = pam_map(groups[:, k:].reshape(-1), levels)
    return i_sym + 1j * q_sym


def band_bits_from_symbols(cfg: ModemConfig, band: int, symbols) -> np.ndarray:
    """Inverse of band_symbols_from_bits on decided symbols."""
    levels = cfg.levels_per_band[band]
    if cfg.format == "ook":
        return ook_demap(symbols)
    if cfg.format == "scap":
        return pam_demap(symbols, levels)
    k = levels.bit_length() - 1
    i_bits = pam_demap(np.real(symbols), levels).reshape(-1, k)
    q_bits = pam_demap(np.imag(symbols), levels).reshape(-1, k)
    return np.hstack([i_bits, q_bits]).reshape(-1)


def training_symbols(cfg: ModemConfig, band: int) -> np.ndarray:
    """Known training prefix for a band, derived deterministically from the config."""
    n_bits = cfg.training_len * cfg.bits_per_band_symbol(band)
    bits = prbs15(_band_training_seed(cfg, band), n_bits)
    return band_symbols_from_bits(cfg, band, bits)


def _branch_streams(cfg: ModemConfig, band_symbols: list) -> list:
    """Split per-band symbol streams into per-branch real streams."""
    streams = [None] * cfg.bank.n_branches
    for band, sym in enumerate(band_symbols):
        branches = cfg.band_branches(band)
        if sym is None:
            continue
        if cfg.format == "mcap":
            streams[branches[0]] = np.real(sym)
            streams[branches[1]] = np.imag(sym)
        else:
            streams[branches[0]] = np.real(sym)
    return streams


def modulate(bits_per_band, cfg: ModemConfig, normalize: bool = True) -> SampledSignal:
    """Build the composite transmit waveform for any supported format.

    bits_per_band is one bit sequence per sub-band; an entry of None silences
    that band entirely (no payload, no training).  All active bands must map
    to the same symbol count.  The composite is scaled to unit average
    electrical power unless normalize=False (or the waveform is all-zero).
    """
    if len(bits_per_band) != cfg.n_bands:
        raise ValueError(f"expected {cfg.n_bands} bit streams, got {len(bits_per_band)}")
    band_symbols = []
    n_payload = None
    for band, bits in enumerate(bits_per_band):
        if bits is None:
            band_symbols.append(None)
            continue
        payload = band_symbols_from_bits(cfg, band, bits)
        if n_payload is None:
            n_payload = len(payload)
        elif len(payload) != n_payload:
            raise ValueError("bit streams map to unequal symbol counts across bands")
        band_symbols.append(np.concatenate([training_symbols(cfg, band), payload]))
    if n_payload is None:
        raise ValueError("at least one band must carry bits")
    n_total = n_payload + cfg.training_len

    bank = normalize_bank(cfg.bank, "unit-energy") if cfg.bank.norm_mode == "raw" else cfg.bank
    sps = bank.spec.samples_per_symbol
    taps_len = len(bank.taps[0])
    stagger = cfg.stagger_samples()
    out_len = n_total * sps + taps_len - 1 + int(stagger.max(initial=0))
    composite = np.zeros(out_len)
    for branch, stream in enumerate(_branch_streams(cfg, band_symbols)):
        if stream is None:
            continue
        shaped = oaconvolve(upsample_zero_pad(stream, sps), bank.taps[branch])
        delay = int(stagger[branch])
        composite[delay : delay + len(shaped)] += shaped

    if normalize:
        rms = np.sqrt(np.mean(composite**2))
        if rms > 0:
            composite = composite / rms
    meta = {
        "format": cfg.format,
        "symbol_rate": cfg.symbol_rate,
        "n_symbols": n_total,
        "n_payload": n_payload,
        "training_len": cfg.training_len,
        "config_digest": cfg.digest(),
        "origin": "modulate",
    }
    return SampledSignal(composite, cfg.sample_rate, meta)


def scap_modulate(bits_per_band, cfg: ModemConfig, normalize: bool = True) -> SampledSignal:
    if cfg.format != "scap":
        raise ValueError("scap_modulate requires an sCAP config")
    return modulate(bits_per_band, cfg, normalize)


def mcap_modulate(bits_per_band, cfg: ModemConfig, normalize: bool = True) -> SampledSignal:
    if cfg.format != "mcap":
        raise ValueError("mcap_modulate requires an mCAP config")
    return modulate(bits_per_band, cfg, normalize)


def ook_modulate(bits, cfg: ModemConfig, normalize: bool = True) -> SampledSignal:
    if cfg.format != "ook":
        raise ValueError("ook_modulate requires an OOK config")
    return modulate([bits], cfg, normalize)


def estimate_cpe(rx_symbols, known):
    """Least-squares channel estimate over the training prefix.

    Complex inputs give the joint rotation/gain h = <known, rx> / <known, known>;
    real inputs give the real least-squares gain.  The correction applied by
    cpe_correct is 1 / h.
    """
    rx = np.asarray(rx_symbols)
    kn = np.asarray(known)
    if len(kn) == 0:
        raise ValueError("CPE correction requires a non-empty training prefix")
    if len(rx) < len(kn):
        raise ValueError("received symbols shorter than the training prefix")
    denom = np.vdot(kn, kn)
    if denom == 0:
        return 1.0 + 0j if np.iscomplexobj(kn) else 1.0
    h = np.vdot(kn, rx[: len(kn)]) / denom
    if not np.iscomplexobj(kn) and not np.iscomplexobj(rx):
        return float(np.real(h))
    return complex(h)


def cpe_correct(rx_symbols, training):
    """Derotate/rescale rx_symbols by the training-based estimate.

    Returns (corrected, correction) with correction = 1 / h.
    """
    kn = np.asarray(training)
    if len(kn) == 0:
        raise ValueError("CPE correction requires a non-empty training prefix")
    if len(kn) < MIN_TRAINING:
        raise ValueError(f"training prefix must hold at least {MIN_TRAINING} symbols")
    h = estimate_cpe(rx_symbols, kn)
    correction = 1.0 / h
    return np.asarray(rx_symbols) * correction, correction


@dataclass
class DemodResult:
    band_symbols: list  # corrected payload soft symbols per sub-band (real for PAM bands)
    band_bits: list  # recovered payload bits per sub-band
    bits: BitStream  # band-major concatenation of band_bits
    timing_offset: int = 0
    corrections: dict = field(default_factory=dict)


def _cpe_groups(cfg: ModemConfig) -> list:
    """(kind, band indices, branch indices) per jointly-corrected group."""
    if cfg.format == "scap":
        return [("real", (0,), (0,)), ("complex", (1, 2), (1, 2)), ("real", (3,), (3,))]
    if cfg.format == "mcap":
        return [("complex", (s,), (2 * s, 2 * s + 1)) for s in range(cfg.n_bands)]
    return [("real", (0,), (0,))]


def _group_alphabet_power(cfg: ModemConfig, kind: str) -> float:
    # unit-power PAM per dimension; OOK's unipolar {0, 2} alphabet also has mean square 2
    if cfg.format == "ook":
        return float(np.mean(np.square(OOK_LEVELS)))
    return 2.0 if kind == "complex" else 1.0


def _group_rx(kind, soft, branches):
    if kind == "real":
        return soft[branches[0]]
    return soft[branches[0]] + 1j * soft[branches[1]]


def _fractional_delay(x: np.ndarray, shift: float) -> np.ndarray:
    """Delay x by a fractional number of samples via an FFT phase ramp.

    Exact for band-limited content; the circular wrap-around only touches the
    filter transients at the array ends, which are never sampled.
    """
    n = len(x)
    freqs = np.fft.rfftfreq(n)
    spectrum = np.fft.rfft(x) * np.exp(-2j * np.pi * freqs * shift)
    if n % 2 == 0:
        spectrum[-1] = spectrum[-1].real  # keep the Nyquist bin real
    return np.fft.irfft(spectrum, n)


def _group_known(cfg, kind, bands):
    if cfg.format == "mcap":
        return training_symbols(cfg, bands[0])
    if kind == "real":
        return training_symbols(cfg, bands[0])
    return training_symbols(cfg, bands[0]) + 1j * training_symbols(cfg, bands[1])


def demodulate(signal: SampledSignal, cfg: ModemConfig, sync: str = "analytic",
               sync_window: int | None = None) -> DemodResult:
    """Matched-filter demodulation back to per-band symbols and bits.

    sync="analytic" samples at the known transmit group delay (exact on an
    undispersive channel); sync="correlate" additionally searches a window of
    integer sample offsets for the one maximising correlation with the known
    training prefix, which absorbs channel group delay.  One offset is shared
    by all branches; each branch keeps its own half-symbol stagger on top.
    """
    bank = normalize_bank(cfg.bank, "unit-energy") if cfg.bank.norm_mode == "raw" else cfg.bank
    sps = bank.spec.samples_per_symbol
    if abs(signal.sample_rate - cfg.sample_rate) > 1e-6 * cfg.sample_rate:
        raise ValueError(
            f"signal sample rate {signal.sample_rate} does not match config rate {cfg.sample_rate}"
        )
    taps_len = len(bank.taps[0])
    stagger = cfg.stagger_samples()
    s_max = int(stagger.max(initial=0))
    body = len(signal) - (taps_len - 1) - s_max
    if body <= 0 or body % sps:
        raise ValueError("signal length is inconsistent with the filter bank and stagger map")
    n_total = body // sps
    n_train = cfg.training_len
    if n_total <= n_train:
        raise ValueError("signal shorter than the filter transient plus training prefix")

    matched = [oaconvolve(signal.samples, taps[::-1]) for taps in bank.taps]
    base = taps_len - 1 + np.arange(n_total) * sps

    groups = _cpe_groups(cfg)
    delta = 0
    if sync == "correlate":
        if n_train == 0:
            raise ValueError("correlation sync requires a training prefix")
        known = [_group_known(cfg, kind, bands) for kind, bands, branches in groups]
        known_energy = [abs(np.vdot(kn, kn)) for kn in known]

        def timing_metric(d):
            metric = 0.0
            idx = base[:n_train] + d
            for (kind, bands, branches), kn, energy in zip(groups, known, known_energy):
                if energy == 0:
                    continue
                if kind == "real":
                    rx = matched[branches[0]][idx + stagger[branches[0]]]
                else:
                    rx = (matched[branches[0]][idx + stagger[branches[0]]]
                          + 1j * matched[branches[1]][idx + stagger[branches[1]]])
                metric += abs(np.vdot(kn, rx)) ** 2 / energy
            return metric

        window = 4 * sps if sync_window is None else int(sync_window)
        window = min(window, taps_len - 1 - s_max - 1)
        candidates = sorted(range(-window, window + 1), key=lambda d: (abs(d), d))
        best_metric = -np.inf
        for d in candidates:
            metric = timing_metric(d)
            if metric > best_metric + 1e-12:
                best_metric = metric
                delta = d
        # parabolic refinement: an integer-quantized sampling phase leaves up
        # to half a sample of timing error, which re-couples the staggered
        # Hilbert pair; shift the matched outputs by the fractional remainder
        m_prev, m_next = timing_metric(delta - 1), timing_metric(delta + 1)
        curvature = m_prev - 2.0 * best_metric + m_next
        if curvature < 0:
            frac = 0.5 * (m_prev - m_next) / curvature
            if 1e-3 < abs(frac) <= 0.75:
                matched = [_fractional_delay(m, -frac) for m in matched]
    elif sync != "analytic":
        raise ValueError(f"unknown sync mode {sync!r}")

    soft = [matched[b][base + int(stagger[b]) + delta] for b in range(bank.n_branches)]

    band_symbols = [None] * cfg.n_bands
    band_bits = [None] * cfg.n_bands
    corrections = {}
    for kind, bands, branches in groups:
        y = _group_rx(kind, soft, branches)
        if n_train > 0:
            known = _group_known(cfg, kind, bands)
            corrected, corr = cpe_correct(y, known)
        else:
            scale = np.sqrt(np.mean(np.abs(y) ** 2) / _group_alphabet_power(cfg, kind))
            corr = 1.0 / scale if scale > 0 else 1.0
            corrected = y * corr
        corrections["+".join(bank.names[b] for b in branches)] = corr
        payload = corrected[n_train:]
        if cfg.format == "mcap":
            band_symbols[bands[0]] = payload
            band_bits[bands[0]] = band_bits_from_symbols(cfg, bands[0], payload)
        elif kind == "complex":  # the sCAP Hilbert pair, reported as two PAM sub-bands
            for part, band in zip((np.real(payload), np.imag(payload)), bands):
                band_symbols[band] = part
                band_bits[band] = band_bits_from_symbols(cfg, band, part)
        else:
            band_symbols[bands[0]] = np.real(payload)
            band_bits[bands[0]] = band_bits_from_symbols(cfg, bands[0], np.real(payload))

    all_bits = np.concatenate(band_bits) if band_bits else np.empty(0, dtype=np.uint8)
    return DemodResult(
        band_symbols=band_symbols,
        band_bits=band_bits,
        bits=BitStream(all_bits, origin="explicit"),
        timing_offset=delta,
        corrections=corrections,
    )
