"""Uniform sampler and 12-bit quantizer of the sensor controller."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .traces import SampleTrace

MAX_FS = 200_000.0


@dataclass(frozen=True)
class AdcConfig:
    bits: int = 12
    v_low: float = 0.0
    v_high: float = 3.0
    fs: float = 1000.0

    def __post_init__(self):
        if not 8 <= self.bits <= 16:
            raise ValueError("bits must lie in [8, 16]")
        if not self.v_low < self.v_high:
            raise ValueError("v_low must be below v_high")
        if not 0 < self.fs <= MAX_FS:
            raise ValueError(f"fs must lie in (0, {MAX_FS:g}] Hz")

    @property
    def full_scale(self) -> int:
        return (1 << self.bits) - 1

    @property
    def lsb(self) -> float:
        return (self.v_high - self.v_low) / self.full_scale


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def resample(trace: SampleTrace, fs: float) -> SampleTrace:
    """Bring a trace to ``fs``: sample-and-hold for integer decimation, linear interpolation otherwise."""
    if fs == trace.fs:
        return trace
    ratio = trace.fs / fs
    if abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1:
        return SampleTrace(fs, trace.samples[:: int(round(ratio))], trace.unit, trace.t0)
    n = int(np.floor(len(trace) * fs / trace.fs))
    t_new = np.arange(n) / fs
    t_old = np.arange(len(trace)) / trace.fs
    return SampleTrace(fs, np.interp(t_new, t_old, trace.samples), trace.unit, trace.t0)


def quantize(trace: SampleTrace, cfg: AdcConfig = AdcConfig()) -> SampleTrace:
    """Volts to clamped integer codes (round half away from zero)."""
    if trace.unit != "volt":
        raise ValueError("quantize expects a volt trace")
    trace = resample(trace, cfg.fs)
    scaled = (trace.samples - cfg.v_low) / (cfg.v_high - cfg.v_low) * cfg.full_scale
    codes = np.clip(_round_half_away(scaled), 0, cfg.full_scale).astype(np.int64)
    return SampleTrace(cfg.fs, codes, "adc-code", trace.t0)


def dequantize(codes: SampleTrace, cfg: AdcConfig = AdcConfig()) -> SampleTrace:
    if codes.unit != "adc-code":
        raise ValueError("dequantize expects an adc-code trace")
    c = codes.samples
    if c.size and (c.min() < 0 or c.max() > cfg.full_scale):
        bad = c[(c < 0) | (c > cfg.full_scale)][:5]
        raise ValueError(f"codes out of range for {cfg.bits}-bit converter: {bad.tolist()}")
    v = cfg.v_low + c / cfg.full_scale * (cfg.v_high - cfg.v_low)
    return SampleTrace(codes.fs, v, "volt", codes.t0)
