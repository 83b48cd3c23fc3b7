"""Synthetic ECG ground truth and interference injection.

Beats are built from five Gaussian bumps (P, Q, R, S, T) placed at fixed
phases of each RR interval. All randomness comes from an explicit seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .traces import SampleTrace

# (phase in cycle, gaussian sigma in s, relative amplitude)
DEFAULT_MORPHOLOGY = (
    (0.10, 0.025, 0.12),   # P
    (0.22, 0.010, -0.12),  # Q
    (0.25, 0.012, 1.00),   # R
    (0.28, 0.010, -0.25),  # S
    (0.55, 0.045, 0.30),   # T
)
R_WAVE = 2


@dataclass(frozen=True)
class EcgParams:
    heart_rate: float = 60.0
    p_qrs_t_morphology: tuple = DEFAULT_MORPHOLOGY
    peak_to_peak: float = 1.0
    rr_jitter: float = 0.0
    # indices of beats to omit entirely (simulated missed pulses)
    missed_beats: tuple = ()

    def __post_init__(self):
        if not self.heart_rate > 0:
            raise ValueError("heart_rate must be positive")
        if not 0 < self.peak_to_peak <= 3:
            raise ValueError("peak_to_peak must lie in (0, 3] mV")
        if not 0 <= self.rr_jitter <= 0.2:
            raise ValueError("rr_jitter must lie in [0, 0.2]")
        if len(self.p_qrs_t_morphology) != 5:
            raise ValueError("morphology needs exactly five bumps (P, Q, R, S, T)")
        for phase, width, _ in self.p_qrs_t_morphology:
            if width <= 0:
                raise ValueError("bump widths must be positive")
            if not 0 <= phase < 1:
                raise ValueError("bump phases must lie in [0, 1)")


@dataclass(frozen=True)
class MotionBurst:
    start: float
    duration: float
    amplitude: float  # rms, mV
    band: tuple = (0.5, 10.0)


@dataclass(frozen=True)
class InterferenceSpec:
    powerline: tuple | None = None        # (Hz, V amplitude)
    baseline_wander: tuple | None = None  # (mV amplitude, Hz)
    motion_bursts: tuple = ()
    lead_off_events: tuple = ()           # ((start s, duration s), ...)
    white_noise_rms: float = 0.0          # µV
    lead_off_offset: float = 300.0        # mV

    def __post_init__(self):
        if self.powerline is not None:
            f, a = self.powerline
            if f <= 0 or a < 0:
                raise ValueError("powerline needs positive frequency and non-negative amplitude")
        if self.baseline_wander is not None:
            a, f = self.baseline_wander
            if f <= 0 or a < 0:
                raise ValueError("baseline wander needs positive frequency and non-negative amplitude")
        for b in self.motion_bursts:
            if b.duration < 0 or b.amplitude < 0:
                raise ValueError("motion bursts need non-negative duration and amplitude")
            lo, hi = b.band
            if not 0 < lo < hi:
                raise ValueError(f"invalid motion band {b.band}")
        for start, dur in self.lead_off_events:
            if dur < 0:
                raise ValueError("lead-off durations must be non-negative")
        if self.white_noise_rms < 0:
            raise ValueError("white_noise_rms must be non-negative")


@dataclass(frozen=True)
class InterferenceTruth:
    """Every injected component, sample-exact, in the unit of the trace."""

    components: dict = field(default_factory=dict)

    def total(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        for v in self.components.values():
            out = out + v
        return out


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def beat_onsets(params: EcgParams, duration: float, seed: int = 0):
    """Onset times and RR lengths of every beat that starts before ``duration``."""
    rr0 = 60.0 / params.heart_rate
    rng = _rng(seed, 0)
    onsets, rrs = [], []
    t = 0.0
    while t < duration:
        rr = rr0
        if params.rr_jitter > 0:
            rr = rr0 * float(np.clip(1 + params.rr_jitter * rng.standard_normal(), 0.5, 1.5))
        onsets.append(t)
        rrs.append(rr)
        t += rr
    return np.asarray(onsets), np.asarray(rrs)


def r_peak_times(params: EcgParams, duration: float, seed: int = 0) -> np.ndarray:
    """Ground-truth R-wave times for the trace :func:`synthesize_ecg` produces."""
    onsets, rrs = beat_onsets(params, duration, seed)
    r_phase = params.p_qrs_t_morphology[R_WAVE][0]
    t = onsets + r_phase * rrs
    keep = np.ones(t.size, bool)
    missed = [i for i in params.missed_beats if 0 <= i < t.size]
    keep[missed] = False
    keep &= t < duration
    return t[keep]


def _template_scale(params: EcgParams) -> float:
    rr = 60.0 / params.heart_rate
    tt = np.linspace(-rr, 2 * rr, 6000)
    beat = np.zeros_like(tt)
    for phase, width, amp in params.p_qrs_t_morphology:
        for k in (-1, 0, 1):
            beat += amp * np.exp(-0.5 * ((tt - (k + phase) * rr) / width) ** 2)
    ptp = beat.max() - beat.min()
    return params.peak_to_peak / ptp


def synthesize_ecg(params: EcgParams, duration: float, fs: float = 1000.0, seed: int = 0) -> SampleTrace:
    """Clean ECG in millivolts, ``floor(duration * fs)`` samples."""
    if not fs > 0:
        raise ValueError(f"sample rate must be positive, got {fs}")
    if duration < 0:
        raise ValueError("duration must be non-negative")
    n = int(math.floor(duration * fs + 1e-9))
    t = np.arange(n) / fs
    x = np.zeros(n)
    if n == 0:
        return SampleTrace(fs, x, "millivolt")
    scale = _template_scale(params)
    onsets, rrs = beat_onsets(params, duration, seed)
    missed = set(params.missed_beats)
    for i, (t_on, rr) in enumerate(zip(onsets, rrs)):
        if i in missed:
            continue
        for phase, width, amp in params.p_qrs_t_morphology:
            center = t_on + phase * rr
            lo = max(0, int((center - 6 * width) * fs))
            hi = min(n, int((center + 6 * width) * fs) + 2)
            if lo >= hi:
                continue
            seg = t[lo:hi]
            x[lo:hi] += scale * amp * np.exp(-0.5 * ((seg - center) / width) ** 2)
    return SampleTrace(fs, x, "millivolt")


def _band_noise(rng, n: int, fs: float, band) -> np.ndarray:
    lo, hi = band
    hi = min(hi, 0.45 * fs)
    white = rng.standard_normal(n + 2 * int(fs))
    sos = sps.butter(4, [lo, hi], btype="bandpass", fs=fs, output="sos")
    y = sps.sosfiltfilt(sos, white)[int(fs):int(fs) + n]
    rms = np.sqrt(np.mean(y**2)) if n else 1.0
    return y / rms if rms > 0 else y


def _check_lead_off(events) -> None:
    spans = sorted((s, s + d) for s, d in events)
    for (s0, e0), (s1, _) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ValueError(f"overlapping lead-off windows at {s1:g} s")


def inject_interference(clean: SampleTrace, spec: InterferenceSpec, seed: int = 0):
    """Add every enabled corruption to a clean millivolt trace.

    Returns ``(corrupted, truth)``; ``truth.components`` holds each
    additive term so ``corrupted - clean`` can be decomposed exactly.
    """
    if clean.unit != "millivolt":
        raise ValueError("inject_interference expects a millivolt trace")
    _check_lead_off(spec.lead_off_events)
    n, fs = len(clean), clean.fs
    t = clean.times
    comps: dict[str, np.ndarray] = {}
    if spec.powerline is not None:
        f, a_volt = spec.powerline
        comps["powerline"] = a_volt * 1e3 * np.sin(2 * np.pi * f * t)
    if spec.baseline_wander is not None:
        a, f = spec.baseline_wander
        comps["baseline_wander"] = a * np.sin(2 * np.pi * f * t)
    if spec.motion_bursts:
        motion = np.zeros(n)
        for i, b in enumerate(spec.motion_bursts):
            lo = max(0, int(round((b.start - clean.t0) * fs)))
            hi = min(n, int(round((b.start + b.duration - clean.t0) * fs)))
            if hi > lo:
                motion[lo:hi] += b.amplitude * _band_noise(_rng(seed, 10 + i), hi - lo, fs, b.band)
        comps["motion"] = motion
    if spec.lead_off_events:
        lead = np.zeros(n)
        for start, dur in spec.lead_off_events:
            lo = max(0, int(round((start - clean.t0) * fs)))
            hi = min(n, int(round((start + dur - clean.t0) * fs)))
            lead[lo:hi] = spec.lead_off_offset
        comps["lead_off"] = lead
    if spec.white_noise_rms > 0:
        comps["white_noise"] = spec.white_noise_rms * 1e-3 * _rng(seed, 1).standard_normal(n)
    if not comps:
        return clean, InterferenceTruth({})
    truth = InterferenceTruth(comps)
    return clean.with_samples(clean.samples + truth.total(n)), truth


def common_mode_signal(spec: InterferenceSpec, duration: float, fs: float = 1000.0, seed: int = 0) -> SampleTrace:
    """Common-mode voltage (volts) seen by both signal electrodes."""
    if duration < 0:
        raise ValueError("duration must be non-negative")
    if not fs > 0:
        raise ValueError(f"sample rate must be positive, got {fs}")
    n = int(math.floor(duration * fs + 1e-9))
    t = np.arange(n) / fs
    v = np.zeros(n)
    if spec.powerline is not None:
        f, a = spec.powerline
        v += a * np.sin(2 * np.pi * f * t)
    if spec.white_noise_rms > 0:
        v += spec.white_noise_rms * 1e-6 * _rng(seed, 2).standard_normal(n)
    return SampleTrace(fs, v, "volt")
