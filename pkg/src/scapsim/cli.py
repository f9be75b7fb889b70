"""Command-line front end.

Subcommands: gen-filters, modulate, demodulate, simulate, sweep, psd, eye.
Exit codes: 0 success, 1 configuration error, 2 runtime failure, 3 partial sweep.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from scapsim import harness, metrics
from scapsim.filters import (FilterSpec, make_mcap_bank, make_ook_bank,
                             make_scap_bank, normalize_bank, save_bank)
from scapsim.harness import ConfigError, ExperimentConfig
from scapsim.modems import BitStream, demodulate, modulate, prbs15
from scapsim.signals import read_bits, read_waveform, write_bits, write_waveform

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # bad flags are configuration errors
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _common_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="experiment config JSON file")
    p.add_argument("--preset", help="built-in preset name (fig7, fig8, fig9, wander, awgn-cal)")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--out-dir", default="out", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="concurrent sweep workers")


def _load_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    elif args.preset:
        cfg = harness.get_preset(args.preset)
    else:
        cfg = harness.preset_fig9()
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    return cfg


def _modem_for(args, cfg: ExperimentConfig):
    if args.format not in cfg.formats:
        cfg = replace(cfg, formats=(args.format,))
    return harness.build_modem(cfg, args.format, args.rate)


def cmd_gen_filters(args) -> int:
    spec = FilterSpec(beta=args.beta, symbol_period=1.0 / args.symbol_rate,
                      oversampling=args.oversampling, span=args.span)
    if args.format == "scap":
        bank = make_scap_bank(spec)
    elif args.format == "mcap":
        bank = make_mcap_bank(spec, args.bands)
    else:
        bank = make_ook_bank(spec)
    if args.norm != "raw":
        bank = normalize_bank(bank, args.norm)
    save_bank(bank, args.out)
    print(f"wrote {args.format} bank ({bank.n_branches} branches, "
          f"{len(bank.taps[0])} taps) to {args.out}")
    return EXIT_OK


def cmd_modulate(args) -> int:
    cfg = _load_config(args)
    modem = _modem_for(args, cfg)
    if args.bits:
        bits = BitStream(read_bits(args.bits), origin="file")
    else:
        bits = prbs15(args.prbs_seed, args.prbs)
    per_band = np.array_split(bits.bits, modem.n_bands)
    sizes = {modem.bits_per_band_symbol(b) for b in range(modem.n_bands)}
    n_sym = min(len(p) // modem.bits_per_band_symbol(b)
                for b, p in enumerate(per_band))
    if n_sym < 1:
        raise ConfigError("too few bits for one symbol per band")
    streams = [p[: n_sym * modem.bits_per_band_symbol(b)]
               for b, p in enumerate(per_band)]
    signal = modulate(streams, modem)
    write_waveform(signal, args.out)
    print(f"wrote {len(signal)} samples at {signal.sample_rate:g} Hz to {args.out}")
    return EXIT_OK


def cmd_demodulate(args) -> int:
    cfg = _load_config(args)
    modem = _modem_for(args, cfg)
    signal = read_waveform(args.infile)
    digest = signal.meta.get("config_digest")
    if digest is not None and digest != modem.digest():
        raise ConfigError("waveform sidecar was produced by a different modem config")
    result = demodulate(signal, modem, sync=args.sync)
    write_bits(result.bits.bits, args.out)
    print(f"recovered {len(result.bits)} bits (timing offset {result.timing_offset} "
          f"samples) to {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    records = harness.run_point(cfg, args.format, args.rate, args.snr)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics.write_points_csv(records, out_dir / "point.csv")
    for r in records:
        print(f"{r.format} band={r.subband} rate={r.rate_bps:g} b/s "
              f"snr={r.snr_db:g} dB: ber={r.counts.ber:.3e} "
              f"({r.counts.bit_errors}/{r.counts.bits_sent})")
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.preset == "awgn-cal":
        seed = args.seed if args.seed is not None else 1
        points = harness.run_awgn_calibration(master_seed=seed)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        harness.write_calibration_csv(points, out_dir / "awgn_cal.csv")
        for ebn0, rec in points:
            print(f"Eb/N0={ebn0:g} dB: ber={rec.ber:.3e} ({rec.bit_errors}/{rec.bits_sent})")
        return EXIT_OK
    cfg = _load_config(args)
    output = harness.run_sweep(cfg, out_dir=args.out_dir, threads=args.threads)
    print(f"{len(output.result.records)} records -> {args.out_dir}/points.csv")
    for s in output.summaries:
        rate = "n/a" if s.rate_bps_gross is None else f"{s.rate_bps_gross:.4g}"
        print(f"{s.format} @ BER {s.threshold:g}: {rate} b/s gross ({s.status})")
    if output.failures:
        for fmt, rate, snr, msg in output.failures:
            print(f"FAILED {fmt} rate={rate:g} snr={snr:g}: {msg}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_psd(args) -> int:
    signal = read_waveform(args.infile)
    freqs, pxx = metrics.psd(signal, segment_len=args.segment_len)
    lines = ["freq_hz,psd"] + [f"{f!r},{p!r}" for f, p in zip(freqs, pxx)]
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {len(freqs)} PSD bins to {args.out}")
    return EXIT_OK


def cmd_eye(args) -> int:
    signal = read_waveform(args.infile)
    sps = args.sps
    if sps is None:
        meta = signal.meta
        if "symbol_rate" not in meta:
            raise ConfigError("waveform metadata lacks symbol_rate; pass --sps")
        sps = int(round(signal.sample_rate / meta["symbol_rate"]))
    traces = metrics.eye_data(signal, sps, args.offset)
    if args.max_traces:
        traces = traces[: args.max_traces]
    lines = [",".join(repr(v) for v in row) for row in traces]
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {len(traces)} eye traces of width {traces.shape[1]} to {args.out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="scapsim",
                     description="Staggered-CAP / multi-band CAP / OOK modem simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-filters", help="synthesize a filter bank as JSON")
    p.add_argument("--format", choices=("scap", "mcap", "ook"), required=True)
    p.add_argument("--symbol-rate", type=float, required=True, help="symbols/s per sub-band")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--oversampling", type=int, default=4)
    p.add_argument("--span", type=int, default=16)
    p.add_argument("--bands", type=int, default=4, help="sub-band count for mcap")
    p.add_argument("--norm", choices=("raw", "unit-energy", "peak-unity"), default="raw")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_filters, beta_default=True)
    _common_flags(p)

    p = sub.add_parser("modulate", help="bits (or PRBS) to a waveform file")
    p.add_argument("--format", choices=("scap", "mcap", "ook"), required=True)
    p.add_argument("--rate", type=float, required=True, help="aggregate bit rate, b/s")
    p.add_argument("--bits", help="input bit stream file (ASCII 0/1)")
    p.add_argument("--prbs", type=int, default=0, help="generate this many PRBS bits instead")
    p.add_argument("--prbs-seed", type=int, default=0x5A5A % 32767 + 1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_modulate)
    _common_flags(p)

    p = sub.add_parser("demodulate", help="waveform file back to bits")
    p.add_argument("--format", choices=("scap", "mcap", "ook"), required=True)
    p.add_argument("--rate", type=float, required=True, help="aggregate bit rate, b/s")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--sync", choices=("analytic", "correlate"), default="correlate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_demodulate)
    _common_flags(p)

    p = sub.add_parser("simulate", help="run a single (format, rate, SNR) point")
    p.add_argument("--format", choices=("scap", "mcap", "ook"), required=True)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--snr", type=float, required=True)
    p.set_defaults(func=cmd_simulate)
    _common_flags(p)

    p = sub.add_parser("sweep", help="run a full sweep from a config or preset")
    p.set_defaults(func=cmd_sweep)
    _common_flags(p)

    p = sub.add_parser("psd", help="Welch PSD of a waveform file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--segment-len", type=int, default=1024)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_psd)
    _common_flags(p)

    p = sub.add_parser("eye", help="eye-diagram traces of a waveform file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--offset", type=int, default=0)
    p.add_argument("--sps", type=int, default=None)
    p.add_argument("--max-traces", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eye)
    _common_flags(p)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "beta_default", False) and args.beta is None:
        args.beta = 1.0 if args.format == "scap" else 0.1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
