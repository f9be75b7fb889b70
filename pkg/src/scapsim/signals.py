"""Waveform container and file I/O for raw-float waveforms and ASCII bit streams."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

WAVEFORM_DTYPE = "<f4"  # raw waveform files are little-endian 32-bit floats
BITS_LINE_WIDTH = 80


@dataclass
class SampledSignal:
    """A real-valued waveform with an explicit sample rate.

    meta carries provenance (producing config digest, channel stages, ...)
    and is propagated, never interpreted, by the DSP stages.
    """

    samples: np.ndarray
    sample_rate: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite values")

    def __len__(self):
        return len(self.samples)

    def replace(self, samples, **meta_updates) -> "SampledSignal":
        """New signal with the same rate, updated samples and merged meta."""
        return SampledSignal(samples, self.sample_rate, {**self.meta, **meta_updates})

    def mean_power(self) -> float:
        return float(np.mean(self.samples**2))


def _sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def write_waveform(signal: SampledSignal, path) -> None:
    """Write raw little-endian float32 samples plus a JSON metadata sidecar."""
    path = Path(path)
    signal.samples.astype(WAVEFORM_DTYPE).tofile(path)
    sidecar = {
        "schema_version": 1,
        "dtype": "float32le",
        "n_samples": len(signal),
        "sample_rate": signal.sample_rate,
        "meta": signal.meta,
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2) + "\n")


def read_waveform(path) -> SampledSignal:
    """Read a waveform written by write_waveform, checking the sidecar."""
    path = Path(path)
    sidecar_file = _sidecar_path(path)
    if not sidecar_file.exists():
        raise ValueError(f"missing sidecar file {sidecar_file}")
    try:
        sidecar = json.loads(sidecar_file.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed sidecar {sidecar_file}: {exc}") from exc
    for key in ("n_samples", "sample_rate"):
        if key not in sidecar:
            raise ValueError(f"sidecar {sidecar_file} is missing {key!r}")
    samples = np.fromfile(path, dtype=WAVEFORM_DTYPE)
    if len(samples) != sidecar["n_samples"]:
        raise ValueError(
            f"waveform length mismatch: file has {len(samples)} samples, "
            f"sidecar declares {sidecar['n_samples']}"
        )
    return SampledSignal(samples, sidecar["sample_rate"], sidecar.get("meta", {}))


def write_bits(bits, path) -> None:
    """Write bits as ASCII 0/1, newline-terminated lines of 80 characters."""
    bits = np.asarray(bits, dtype=np.uint8)
    text = "".join("1" if b else "0" for b in bits)
    lines = [text[i : i + BITS_LINE_WIDTH] for i in range(0, len(text), BITS_LINE_WIDTH)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_bits(path) -> np.ndarray:
    text = Path(path).read_text()
    chars = [c for c in text if c not in "\r\n"]
    bad = set(chars) - {"0", "1"}
    if bad:
        raise ValueError(f"bit stream file contains invalid characters: {sorted(bad)}")
    return np.array([1 if c == "1" else 0 for c in chars], dtype=np.uint8)
