"""Pulse-shaping filter banks: staggered-CAP, multi-band CAP and OOK pulses.

All pulses derive from a root-raised-cosine prototype evaluated on a
symmetric grid of span * sps + 1 points.  Branch pulses are the prototype
multiplied by cosine/sine carriers; a filter bank records the taps, the
carrier frequencies, and the per-branch half-symbol stagger that makes the
bank orthogonal at symbol-spaced sampling instants.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

# Grid points within this distance of |4*beta*t| = 1 (t in symbol periods)
# are treated as singular and replaced by the analytic limit.
SINGULARITY_TOL = 1e-9

SCAP_BRANCHES = ("pam_low", "cap_i", "cap_q", "pam_high")


@dataclass(frozen=True)
class FilterSpec:
    """Design parameters shared by every pulse in a bank.

    beta: excess-bandwidth factor, 0 < beta <= 1
    symbol_period: symbol duration in seconds
    oversampling: integer up-sampling factor on top of the minimum rate
    span: filter length in symbol periods (positive even integer)
    """

    beta: float
    symbol_period: float
    oversampling: int = 4
    span: int = 16

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if self.symbol_period <= 0:
            raise ValueError("symbol_period must be positive")
        if self.oversampling < 1 or int(self.oversampling) != self.oversampling:
            raise ValueError("oversampling must be a positive integer")
        if self.span < 2 or self.span % 2 != 0:
            raise ValueError("span must be an even integer >= 2")

    @property
    def samples_per_symbol(self) -> int:
        """oversampling * ceil(2 * (1 + beta)), exact in integer arithmetic."""
        return int(self.oversampling) * math.ceil(2.0 * (1.0 + self.beta))

    @property
    def sample_rate(self) -> float:
        return self.samples_per_symbol / self.symbol_period

    @property
    def n_taps(self) -> int:
        return self.span * self.samples_per_symbol + 1


@dataclass
class FilterBank:
    """An ordered set of equal-length branch pulses on a common tap grid.

    stagger maps branch name -> delay in samples; entries are multiples of
    half a symbol (sps // 2).  norm_mode is one of "raw", "unit-energy",
    "peak-unity".
    """

    spec: FilterSpec
    kind: str
    names: tuple
    taps: list
    carriers_hz: tuple
    subband_bandwidth_hz: float
    norm_mode: str = "raw"
    stagger: dict = field(default_factory=dict)

    def __post_init__(self):
        self.taps = [np.asarray(t, dtype=np.float64) for t in self.taps]
        lengths = {len(t) for t in self.taps}
        if len(lengths) != 1:
            raise ValueError(f"branch tap arrays differ in length: {sorted(lengths)}")
        if len(self.names) != len(self.taps) or len(self.names) != len(self.carriers_hz):
            raise ValueError("names, taps and carriers_hz must have equal length")
        half = self.spec.samples_per_symbol // 2
        for name, s in self.stagger.items():
            if name not in self.names:
                raise ValueError(f"stagger names unknown branch {name!r}")
            if s % half != 0:
                raise ValueError(f"stagger for {name!r} must be a multiple of {half} samples")

    @property
    def n_branches(self) -> int:
        return len(self.taps)

    def stagger_samples(self) -> np.ndarray:
        """Per-branch delays in samples, in branch order (0 where unset)."""
        return np.array([self.stagger.get(n, 0) for n in self.names], dtype=int)

    def branch_energies(self) -> np.ndarray:
        return np.array([float(np.dot(t, t)) for t in self.taps])


def _rrc_center_value(beta: float) -> float:
    return 1.0 - beta + 4.0 * beta / np.pi


def _rrc_edge_value(beta: float) -> float:
    # L'Hopital limit at |t| = 1/(4*beta)
    return (beta / np.sqrt(2.0)) * (
        (1.0 + 2.0 / np.pi) * np.sin(np.pi / (4.0 * beta))
        + (1.0 - 2.0 / np.pi) * np.cos(np.pi / (4.0 * beta))
    )


def tap_grid(spec: FilterSpec) -> np.ndarray:
    """Symmetric tap times in symbol periods: m / sps for m over +-span/2 symbols."""
    half = spec.span * spec.samples_per_symbol // 2
    return np.arange(-half, half + 1) / spec.samples_per_symbol


def make_rrc(spec: FilterSpec) -> np.ndarray:
    """Root-raised-cosine taps on the symmetric grid of span * sps + 1 points.

    The closed form has removable singularities at t = 0 and |t| = 1/(4*beta);
    grid points landing there (within SINGULARITY_TOL of |4*beta*t| = 1)
    receive the analytic limits rather than a direct evaluation.
    """
    beta = spec.beta
    t = tap_grid(spec)
    with np.errstate(divide="ignore", invalid="ignore"):
        num = np.sin(np.pi * t * (1.0 - beta)) + 4.0 * beta * t * np.cos(np.pi * t * (1.0 + beta))
        den = np.pi * t * (1.0 - (4.0 * beta * t) ** 2)
        taps = num / den
    taps[t == 0.0] = _rrc_center_value(beta)
    edge = np.abs(np.abs(4.0 * beta * t) - 1.0) <= SINGULARITY_TOL
    taps[edge] = _rrc_edge_value(beta)
    return taps


def _check_alias(spec: FilterSpec, top_edge_hz: float):
    nyquist = spec.samples_per_symbol / (2.0 * spec.symbol_period)
    if top_edge_hz > nyquist * (1.0 + 1e-12):
        raise ValueError(
            f"band edge {top_edge_hz:.6g} Hz exceeds Nyquist {nyquist:.6g} Hz; "
            "increase the oversampling factor"
        )


def make_scap_bank(spec: FilterSpec, calibrate: bool = True) -> FilterBank:
    """Build the four-branch staggered-CAP bank.

    Branches, lowest band first: a baseband PAM pulse, the cosine and sine
    pulses of the centre Hilbert pair (sqrt(2)-scaled), and an up-converted
    PAM pulse at twice the pair's carrier.  With calibrate=True the
    half-symbol stagger map is found by minimising the worst cross-branch
    residual and stored in the bank.
    """
    base = make_rrc(spec)
    t_sec = tap_grid(spec) * spec.symbol_period
    b_sub = (1.0 + spec.beta) / spec.symbol_period
    fc_pair = 0.5 * b_sub
    fc_high = 2.0 * fc_pair
    _check_alias(spec, fc_high + 0.5 * b_sub)

    taps = [
        base,
        np.sqrt(2.0) * base * np.cos(2.0 * np.pi * fc_pair * t_sec),
        np.sqrt(2.0) * base * np.sin(2.0 * np.pi * fc_pair * t_sec),
        base * np.cos(2.0 * np.pi * fc_high * t_sec),
    ]
    bank = FilterBank(
        spec=spec,
        kind="scap",
        names=SCAP_BRANCHES,
        taps=taps,
        carriers_hz=(0.0, fc_pair, fc_pair, fc_high),
        subband_bandwidth_hz=b_sub,
    )
    if calibrate:
        bank.stagger = calibrate_stagger(bank)
    return bank


def make_mcap_bank(spec: FilterSpec, bands: int) -> FilterBank:
    """Build a multi-band CAP bank of `bands` Hilbert pairs on a common grid.

    Band s (1-based) sits at carrier (2s - 1) * (1 + beta) / (2T) with an
    in-phase cosine pulse and a quadrature sine pulse.
    """
    if bands < 1:
        raise ValueError("bands must be >= 1")
    base = make_rrc(spec)
    t_sec = tap_grid(spec) * spec.symbol_period
    b_sub = (1.0 + spec.beta) / spec.symbol_period
    top_carrier = (2 * bands - 1) * 0.5 * b_sub
    _check_alias(spec, top_carrier + 0.5 * b_sub)

    names, taps, carriers = [], [], []
    for s in range(1, bands + 1):
        fc = (2 * s - 1) * 0.5 * b_sub
        names += [f"b{s}_i", f"b{s}_q"]
        carriers += [fc, fc]
        taps.append(base * np.cos(2.0 * np.pi * fc * t_sec))
        taps.append(base * np.sin(2.0 * np.pi * fc * t_sec))
    return FilterBank(
        spec=spec,
        kind="mcap",
        names=tuple(names),
        taps=taps,
        carriers_hz=tuple(carriers),
        subband_bandwidth_hz=b_sub,
    )


def make_ook_bank(spec: FilterSpec) -> FilterBank:
    """Single baseband RRC pulse for on-off keying."""
    return FilterBank(
        spec=spec,
        kind="ook",
        names=("pulse",),
        taps=[make_rrc(spec)],
        carriers_hz=(0.0,),
        subband_bandwidth_hz=(1.0 + spec.beta) / spec.symbol_period,
    )


def normalize_bank(bank: FilterBank, mode: str) -> FilterBank:
    """Return a copy of the bank with every branch scaled per `mode`.

    "unit-energy" makes sum(taps**2) == 1 per branch; "peak-unity" makes
    max|taps| == 1; "raw" returns the bank unchanged.
    """
    if mode == "raw":
        return bank
    if mode == "unit-energy":
        scaled = [t / np.sqrt(np.dot(t, t)) for t in bank.taps]
    elif mode == "peak-unity":
        scaled = [t / np.max(np.abs(t)) for t in bank.taps]
    else:
        raise ValueError(f"unknown normalization mode {mode!r}")
    out = replace(bank)
    out.taps = scaled
    out.norm_mode = mode
    out.stagger = dict(bank.stagger)
    return out


def orthogonality_residual(bank: FilterBank, stagger: dict | None = None) -> np.ndarray:
    """Worst-case normalized inner products of the bank at symbol-spaced lags, in dB.

    Entry (i, j) is the peak over integer symbol lags k of
    |<f_i(n), f_j(n - k*sps - s_j + s_i)>| / sqrt(E_i * E_j), as 20*log10.
    Off-diagonal entries measure crosstalk over all k; diagonal entries skip
    k = 0 and measure residual ISI of the matched cascade.  The sqrt(E_i*E_j)
    normalization makes the matrix invariant under per-branch rescaling.
    """
    stag = bank.stagger_samples() if stagger is None else np.array(
        [stagger.get(n, 0) for n in bank.names], dtype=int
    )
    half = bank.spec.samples_per_symbol // 2
    if np.any(stag % half != 0):
        raise ValueError("stagger entries must be multiples of half a symbol")
    sps = bank.spec.samples_per_symbol
    energies = bank.branch_energies()
    n = bank.n_branches
    L = len(bank.taps[0])
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            corr = np.correlate(bank.taps[i], bank.taps[j], "full")
            peak = 0.0
            for k in range(-(bank.spec.span + 1), bank.spec.span + 2):
                lag = k * sps + int(stag[j] - stag[i])
                if not -(L - 1) <= lag <= L - 1:
                    continue
                if i == j and k == 0:
                    continue
                peak = max(peak, abs(corr[lag + L - 1]))
            out[i, j] = peak / np.sqrt(energies[i] * energies[j])
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(out)


def calibrate_stagger(bank: FilterBank) -> dict:
    """Find the half-symbol stagger map minimising the worst cross-branch residual.

    The first branch is pinned to zero offset (a global half-symbol shift of
    all branches is equivalent); ties break toward the lexicographically
    smallest assignment, making the result deterministic.
    """
    half = bank.spec.samples_per_symbol // 2
    best_map = None
    best_worst = np.inf
    for combo in itertools.product((0, half), repeat=bank.n_branches - 1):
        candidate = dict(zip(bank.names, (0,) + combo))
        res = orthogonality_residual(bank, candidate)
        off = res[~np.eye(bank.n_branches, dtype=bool)]
        worst = float(np.max(off)) if off.size else -np.inf
        if worst < best_worst - 1e-12:
            best_worst = worst
            best_map = candidate
    return best_map


def matched_cascade_isi(taps: np.ndarray, sps: int) -> float:
    """Peak |ISI| of taps correlated with themselves at nonzero symbol lags,
    relative to the zero-lag peak."""
    corr = np.correlate(taps, taps, "full")
    L = len(taps)
    peak = corr[L - 1]
    worst = 0.0
    k = 1
    while k * sps <= L - 1:
        worst = max(worst, abs(corr[L - 1 + k * sps]), abs(corr[L - 1 - k * sps]))
        k += 1
    return float(worst / peak)


BANK_SCHEMA_VERSION = 1


def bank_to_dict(bank: FilterBank) -> dict:
    return {
        "schema_version": BANK_SCHEMA_VERSION,
        "kind": bank.kind,
        "spec": {
            "beta": bank.spec.beta,
            "symbol_period": bank.spec.symbol_period,
            "oversampling": bank.spec.oversampling,
            "span": bank.spec.span,
            "samples_per_symbol": bank.spec.samples_per_symbol,
        },
        "norm_mode": bank.norm_mode,
        "subband_bandwidth_hz": bank.subband_bandwidth_hz,
        "branches": [
            {
                "name": name,
                "carrier_hz": carrier,
                "stagger_samples": int(bank.stagger.get(name, 0)),
                "taps": [float(x) for x in taps],
            }
            for name, carrier, taps in zip(bank.names, bank.carriers_hz, bank.taps)
        ],
    }


def bank_from_dict(doc: dict) -> FilterBank:
    if doc.get("schema_version") != BANK_SCHEMA_VERSION:
        raise ValueError(f"unsupported bank schema_version {doc.get('schema_version')!r}")
    spec_doc = doc["spec"]
    spec = FilterSpec(
        beta=spec_doc["beta"],
        symbol_period=spec_doc["symbol_period"],
        oversampling=spec_doc["oversampling"],
        span=spec_doc["span"],
    )
    if spec.samples_per_symbol != spec_doc["samples_per_symbol"]:
        raise ValueError("samples_per_symbol in file disagrees with the spec fields")
    branches = doc["branches"]
    bank = FilterBank(
        spec=spec,
        kind=doc["kind"],
        names=tuple(b["name"] for b in branches),
        taps=[np.array(b["taps"], dtype=np.float64) for b in branches],
        carriers_hz=tuple(b["carrier_hz"] for b in branches),
        subband_bandwidth_hz=doc["subband_bandwidth_hz"],
        norm_mode=doc["norm_mode"],
        stagger={b["name"]: b["stagger_samples"] for b in branches if b["stagger_samples"]},
    )
    return bank


def save_bank(bank: FilterBank, path) -> None:
    """Write the bank as JSON; float taps round-trip bit-exactly."""
    Path(path).write_text(json.dumps(bank_to_dict(bank), indent=1) + "\n")


def load_bank(path) -> FilterBank:
    return bank_from_dict(json.loads(Path(path).read_text()))
