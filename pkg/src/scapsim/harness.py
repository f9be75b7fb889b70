"""Experiment orchestration: configs, deterministic sweeps, presets, file I/O.

A sweep point is fully determined by (master seed, format, rate, SNR): payload
bits and noise use seeds split from the master via the documented SHA-256 rule,
so reruns and re-ordered/parallel evaluation produce identical results.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np
from scipy.signal import oaconvolve

from scapsim import metrics
from scapsim.channel import (ChannelConfig, apply_channel, awgn, derive_seed,
                             rise_time_to_bandwidth)
from scapsim.filters import (FilterSpec, make_mcap_bank, make_ook_bank,
                             make_scap_bank, normalize_bank)
from scapsim.metrics import (BerRecord, PointRecord, RateSummary, SweepResult,
                             achievable_rate, aggregate_ber)
from scapsim.modems import (ModemConfig, demodulate, modulate, pam_map, prbs15,
                            upsample_zero_pad)
from scapsim.signals import SampledSignal, read_waveform, write_waveform

CONFIG_SCHEMA_VERSION = 1

# Bundled channel preset: a polymer-LED transmitter with a 694 ns rise time,
# i.e. roughly a 504 kHz first-order low-pass.
PLED_RISE_TIME_S = 694e-9
PLED_LOWPASS_HZ = rise_time_to_bandwidth(PLED_RISE_TIME_S)

# Figure presets run at a fixed per-sample SNR chosen so the OOK baseline
# crosses BER 1e-6 near the middle of the rate grid (the physical link's
# absolute SNR is a free parameter of the simulator).  At 13 dB the OOK
# 1e-6 crossing lands at ~1.7 Mb/s against a 0.9-6.4 Mb/s grid.
FIG_PRESET_SNR_DB = 13.0

EBN0_CAL_GRID_DB = (4.0, 5.0, 6.0, 7.0, 8.0)


class ConfigError(ValueError):
    """Raised for malformed experiment configuration files."""


@dataclass
class ExperimentConfig:
    """A full experiment definition: modem, channel, grids, stop rule, seed."""

    name: str = "custom"
    formats: tuple = ("scap", "mcap", "ook")
    rates_bps: tuple = ()       # aggregate bit rates, sorted ascending
    snrs_db: tuple = (FIG_PRESET_SNR_DB,)
    lowpass_hz: float | None = PLED_LOWPASS_HZ
    dc_block_hz: float = 0.0
    clip: tuple | None = None
    levels: int = 2
    oversampling: int = 4
    beta: dict = field(default_factory=lambda: {"scap": 1.0, "mcap": 0.1, "ook": 0.1})
    span: dict = field(default_factory=lambda: {"scap": 16, "mcap": 24, "ook": 24})
    mcap_bands: int = 4
    training_len: int = 512
    frame_symbols: int = 16384  # payload symbols per band per frame
    min_errors: int = 100
    max_bits: int = 1_000_000
    master_seed: int = 1
    sync: str = "correlate"
    dump_points: tuple = ()     # (format, rate_bps, snr_db) triples for eye/PSD dumps
    schema_version: int = CONFIG_SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version!r}")
        self.formats = tuple(self.formats)
        for fmt in self.formats:
            if fmt not in ("scap", "mcap", "ook"):
                raise ConfigError(f"unknown format {fmt!r}")
        self.rates_bps = tuple(float(r) for r in self.rates_bps)
        self.snrs_db = tuple(float(s) for s in self.snrs_db)
        if not self.rates_bps or list(self.rates_bps) != sorted(set(self.rates_bps)):
            raise ConfigError("rates_bps must be a non-empty, strictly increasing list")
        if not self.snrs_db or list(self.snrs_db) != sorted(set(self.snrs_db)):
            raise ConfigError("snrs_db must be a non-empty, strictly increasing list")
        if self.min_errors < 1 or self.max_bits < 1:
            raise ConfigError("stop rule needs min_errors >= 1 and max_bits >= 1")
        if self.sync not in ("correlate", "analytic"):
            raise ConfigError(f"unknown sync mode {self.sync!r}")

    @property
    def net_fraction(self) -> float:
        return self.frame_symbols / (self.frame_symbols + self.training_len)

    def to_json(self) -> str:
        doc = asdict(self)
        doc["dump_points"] = [list(p) for p in self.dump_points]
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "clip" in doc and doc["clip"] is not None:
            doc["clip"] = tuple(doc["clip"])
        if "dump_points" in doc:
            doc["dump_points"] = tuple(tuple(p) for p in doc["dump_points"])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())


def total_bits_per_symbol(cfg: ExperimentConfig, fmt: str) -> int:
    """Bits carried per symbol period by all sub-bands of a format together."""
    k = int(cfg.levels).bit_length() - 1
    if fmt == "scap":
        return 4 * k
    if fmt == "mcap":
        return 2 * cfg.mcap_bands * k
    return 1  # OOK is binary


def build_modem(cfg: ExperimentConfig, fmt: str, rate_bps: float) -> ModemConfig:
    """Modem for one sweep point; the aggregate bit rate fixes the symbol rate."""
    bits_per_symbol = total_bits_per_symbol(cfg, fmt)
    symbol_rate = rate_bps / bits_per_symbol
    spec = FilterSpec(
        beta=cfg.beta[fmt],
        symbol_period=1.0 / symbol_rate,
        oversampling=cfg.oversampling,
        span=cfg.span[fmt],
    )
    if fmt == "scap":
        bank = make_scap_bank(spec)
        levels = (cfg.levels,) * 4
    elif fmt == "mcap":
        bank = make_mcap_bank(spec, cfg.mcap_bands)
        levels = (cfg.levels,) * cfg.mcap_bands
    else:
        bank = make_ook_bank(spec)
        levels = (2,)
    return ModemConfig(
        format=fmt,
        symbol_rate=symbol_rate,
        bank=bank,
        levels_per_band=levels,
        training_len=cfg.training_len,
    )


def channel_for_point(cfg: ExperimentConfig, fmt: str, rate_bps: float,
                      snr_db: float, frame: int) -> ChannelConfig:
    seed = derive_seed(cfg.master_seed, fmt, repr(rate_bps), repr(snr_db), frame, "noise")
    return ChannelConfig(lowpass_hz=cfg.lowpass_hz, dc_block_hz=cfg.dc_block_hz,
                         snr_db=snr_db, clip=cfg.clip, seed=seed)


def _payload_seed(cfg: ExperimentConfig, fmt, rate_bps, snr_db, frame, band) -> int:
    raw = derive_seed(cfg.master_seed, fmt, repr(rate_bps), repr(snr_db), frame,
                      "payload", band)
    return raw % (2**15 - 1) + 1


def run_point(cfg: ExperimentConfig, fmt: str, rate_bps: float, snr_db: float) -> list:
    """Simulate one sweep point; returns per-band PointRecords plus the aggregate.

    Frames of frame_symbols payload symbols per band are generated, sent and
    scored until the stop rule (min_errors aggregate errors, or max_bits
    aggregate payload bits, whichever first) is met.  Deterministic in
    (master seed, format, rate, SNR).
    """
    modem = build_modem(cfg, fmt, rate_bps)
    n_bands = modem.n_bands
    errors = np.zeros(n_bands, dtype=np.int64)
    bits_sent = np.zeros(n_bands, dtype=np.int64)
    sync = cfg.sync if cfg.training_len > 0 else "analytic"

    frame = 0
    while True:
        tx_bits = [
            prbs15(_payload_seed(cfg, fmt, rate_bps, snr_db, frame, b),
                   cfg.frame_symbols * modem.bits_per_band_symbol(b))
            for b in range(n_bands)
        ]
        tx = modulate(tx_bits, modem)
        rx = apply_channel(tx, channel_for_point(cfg, fmt, rate_bps, snr_db, frame))
        result = demodulate(rx, modem, sync=sync)
        for b in range(n_bands):
            errors[b] += int(np.count_nonzero(result.band_bits[b] != tx_bits[b].bits))
            bits_sent[b] += len(tx_bits[b])
        frame += 1
        if errors.sum() >= cfg.min_errors or bits_sent.sum() >= cfg.max_bits:
            break

    band_records = [BerRecord.from_counts(int(errors[b]), int(bits_sent[b]))
                    for b in range(n_bands)]
    points = [
        PointRecord(fmt, str(b + 1), modem.symbol_rate, modem.bits_per_band_symbol(b),
                    snr_db, band_records[b])
        for b in range(n_bands)
    ]
    points.append(PointRecord(fmt, "aggregate", modem.symbol_rate,
                              modem.total_bits_per_symbol(), snr_db,
                              aggregate_ber(band_records)))
    return points


@dataclass
class SweepOutput:
    result: SweepResult
    summaries: list
    failures: list  # (format, rate_bps, snr_db, message)


def run_sweep(cfg: ExperimentConfig, out_dir=None, threads: int = 1) -> SweepOutput:
    """Evaluate the full (format x rate x SNR) grid and write CSV outputs.

    Points are independent and may be evaluated concurrently; results are
    merged in grid order, so the output is identical for any worker count or
    evaluation order.  Failed points are recorded in the failure report,
    never silently dropped.
    """
    grid = [(fmt, rate, snr) for fmt in cfg.formats
            for rate in cfg.rates_bps for snr in cfg.snrs_db]

    def task(point):
        fmt, rate, snr = point
        try:
            return point, run_point(cfg, fmt, rate, snr), None
        except Exception as exc:  # noqa: BLE001 - reported in the failure list
            return point, [], f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(task, grid))
    else:
        outcomes = [task(p) for p in grid]

    by_point = {point: (records, err) for point, records, err in outcomes}
    records, failures = [], []
    for point in grid:  # merge in grid order regardless of completion order
        recs, err = by_point[point]
        if err is not None:
            failures.append((*point, err))
        else:
            records.extend(recs)

    result = SweepResult(records, net_fraction=cfg.net_fraction)
    summaries = []
    if len(cfg.snrs_db) == 1:
        for fmt in cfg.formats:
            for threshold in result.thresholds:
                summaries.append(achievable_rate(result, fmt, threshold))

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics.write_points_csv(records, out_dir / "points.csv")
        metrics.write_rate_summary_csv(summaries, out_dir / "rate_summary.csv")
        if failures:
            lines = ["format,rate_bps,snr_db,error"]
            lines += [f"{f},{r!r},{s!r},{msg}" for f, r, s, msg in failures]
            (out_dir / "failures.csv").write_text("\n".join(lines) + "\n")
        for point in cfg.dump_points:
            _write_point_dumps(cfg, point, out_dir)
    return SweepOutput(result, summaries, failures)


def _write_point_dumps(cfg: ExperimentConfig, point, out_dir: Path):
    fmt, rate, snr = point
    modem = build_modem(cfg, fmt, rate)
    tx_bits = [prbs15(_payload_seed(cfg, fmt, rate, snr, 0, b),
                      cfg.frame_symbols * modem.bits_per_band_symbol(b))
               for b in range(modem.n_bands)]
    tx = modulate(tx_bits, modem)
    rx = apply_channel(tx, channel_for_point(cfg, fmt, rate, snr, 0))
    tag = f"{fmt}_{rate:g}_{snr:g}"
    for label, sig in (("tx", tx), ("rx", rx)):
        freqs, pxx = metrics.psd(sig, segment_len=min(4096, len(sig)))
        lines = ["freq_hz,psd"] + [f"{f!r},{p!r}" for f, p in zip(freqs, pxx)]
        (out_dir / f"psd_{tag}_{label}.csv").write_text("\n".join(lines) + "\n")
    bank = normalize_bank(modem.bank, "unit-energy")
    matched = oaconvolve(rx.samples, bank.taps[0][::-1])
    sps = bank.spec.samples_per_symbol
    offset = (len(bank.taps[0]) - 1 + int(modem.stagger_samples()[0])) % sps
    eye = metrics.eye_data(matched, sps, offset)[: 4 * cfg.training_len]
    lines = [",".join(repr(v) for v in row) for row in eye]
    (out_dir / f"eye_{tag}.csv").write_text("\n".join(lines) + "\n")


def run_awgn_calibration(ebn0_grid_db=EBN0_CAL_GRID_DB, n_bits: int = 1_000_000,
                         master_seed: int = 1, oversampling: int = 4,
                         span: int = 16) -> list:
    """Antipodal 2-PAM over AWGN through the full shape/match/score chain.

    The per-sample SNR for each point is set so that the matched-filter
    output obeys BER = Q(sqrt(2 Eb/N0)): for a unit-power antipodal branch,
    snr_db = ebn0_db - 10*log10(sps / 2).  Returns (ebn0_db, BerRecord) pairs.
    """
    spec = FilterSpec(beta=1.0, symbol_period=1e-6, oversampling=oversampling, span=span)
    taps = make_scap_bank(spec, calibrate=False).taps[0]
    taps = taps / np.sqrt(np.dot(taps, taps))
    sps = spec.samples_per_symbol
    chunk = 200_000
    out = []
    for ebn0_db in ebn0_grid_db:
        snr_db = ebn0_db - 10.0 * math.log10(sps / 2.0)
        errors = 0
        sent = 0
        block = 0
        while sent < n_bits:
            n = min(chunk, n_bits - sent)
            seed = derive_seed(master_seed, "awgn-cal", repr(ebn0_db), block, "bits")
            bits = prbs15(seed % (2**15 - 1) + 1, n)
            symbols = pam_map(bits, 2)
            x = oaconvolve(upsample_zero_pad(symbols, sps), taps)
            x = x / np.sqrt(np.mean(x**2))
            noisy = awgn(SampledSignal(x, spec.sample_rate), snr_db,
                         derive_seed(master_seed, "awgn-cal", repr(ebn0_db), block, "noise"))
            matched = oaconvolve(noisy.samples, taps[::-1])
            soft = matched[len(taps) - 1 + np.arange(n) * sps]
            errors += int(np.count_nonzero((soft > 0).astype(np.uint8) != bits.bits))
            sent += n
            block += 1
        out.append((ebn0_db, BerRecord.from_counts(errors, sent)))
    return out


def write_calibration_csv(points, path) -> None:
    lines = ["ebn0_db,bits_sent,bit_errors,ber,ci_low,ci_high"]
    for ebn0_db, rec in points:
        lines.append(",".join([repr(ebn0_db), str(rec.bits_sent), str(rec.bit_errors),
                               repr(rec.ber), repr(rec.ci_low), repr(rec.ci_high)]))
    Path(path).write_text("\n".join(lines) + "\n")


def export_waveform(signal: SampledSignal, path) -> None:
    """Write a waveform in the raw-float32 + JSON sidecar interchange format."""
    write_waveform(signal, path)


def import_waveform(path) -> SampledSignal:
    """Read a waveform written by export_waveform; validates the sidecar."""
    return read_waveform(path)


def _fig_rates(lo: float, hi: float, n: int) -> tuple:
    return tuple(float(r) for r in np.geomspace(lo, hi, n))


def preset_fig7() -> ExperimentConfig:
    """sCAP per-sub-band BER vs rate over the bundled PLED channel."""
    return ExperimentConfig(name="fig7", formats=("scap",),
                            rates_bps=_fig_rates(4e5, 8e6, 13),
                            min_errors=5000)


def preset_fig8() -> ExperimentConfig:
    """4-band CAP per-sub-band BER vs rate over the bundled PLED channel."""
    return ExperimentConfig(name="fig8", formats=("mcap",),
                            rates_bps=_fig_rates(9e5, 8e6, 13),
                            min_errors=5000)


def preset_fig9() -> ExperimentConfig:
    """sCAP / 4-CAP / OOK aggregate BER over a shared rate grid at fixed SNR.

    The grid's lower edge keeps every format's simulation rate above twice
    the 504 kHz channel cutoff; min_errors is set high enough that points
    near the FEC threshold run the full bit budget.
    """
    return ExperimentConfig(name="fig9", formats=("scap", "mcap", "ook"),
                            rates_bps=_fig_rates(9e5, 6.4e6, 13),
                            min_errors=5000)


def preset_wander() -> ExperimentConfig:
    """Baseline-wander study: sCAP with a 1 kHz DC block, low and high rates.

    The low point runs each sub-band at 12.5 kBd, where the 1 kHz pole eats a
    visible fraction of the lowest sub-band; the oversampling factor is
    raised so the 504 kHz device pole stays below the simulation Nyquist.
    """
    return ExperimentConfig(name="wander", formats=("scap",),
                            rates_bps=(5e4, 6e6), dc_block_hz=1e3,
                            oversampling=24, max_bits=400_000, min_errors=2000)


PRESETS = {
    "fig7": preset_fig7,
    "fig8": preset_fig8,
    "fig9": preset_fig9,
    "wander": preset_wander,
}


def get_preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)} or 'awgn-cal'")
    return PRESETS[name]()
