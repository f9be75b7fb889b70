"""Staggered-CAP modem toolkit with an LED-channel simulator and BER harness."""

from scapsim.channel import (ChannelConfig, apply_channel, awgn, dc_block,
                             derive_seed, lowpass_first_order,
                             rise_time_to_bandwidth)
from scapsim.filters import (FilterBank, FilterSpec, calibrate_stagger,
                             load_bank, make_mcap_bank, make_ook_bank,
                             make_rrc, make_scap_bank, matched_cascade_isi,
                             normalize_bank, orthogonality_residual, save_bank)
from scapsim.harness import (ConfigError, ExperimentConfig, build_modem,
                             export_waveform, get_preset, import_waveform,
                             run_awgn_calibration, run_point, run_sweep)
from scapsim.metrics import (ERROR_FREE_THRESHOLD, FEC_THRESHOLD, BerRecord,
                             PointRecord, RateSummary, SweepResult,
                             achievable_rate, aggregate_ber, ber, eye_data,
                             psd, q_function, rate_at_threshold)
from scapsim.modems import (BitStream, DemodResult, ModemConfig, cpe_correct,
                            demodulate, estimate_cpe, mcap_modulate, modulate,
                            ook_modulate, pam_demap, pam_map, prbs15,
                            scap_modulate, upsample_zero_pad)
from scapsim.signals import (SampledSignal, read_bits, read_waveform,
                             write_bits, write_waveform)

__version__ = "0.1.0"
