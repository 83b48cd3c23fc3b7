"""Discrete-time filter design for the front-end stages.

All designs use the bilinear transform with prewarping at the critical
frequency, so the analog corner (or notch centre) lands exactly on the
requested digital frequency.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps


@dataclass(frozen=True)
class FilterCoefficients:
    b: tuple
    a: tuple
    fs: float

    def __post_init__(self):
        if self.a[0] != 1.0:
            raise ValueError("coefficients must be normalised so a[0] == 1")

    @property
    def order(self) -> int:
        return max(len(self.a), len(self.b)) - 1

    def response(self, freqs) -> np.ndarray:
        """Complex frequency response evaluated at ``freqs`` (Hz)."""
        _, h = sps.freqz(self.b, self.a, worN=np.atleast_1d(np.asarray(freqs, float)), fs=self.fs)
        return h

    def gain_db(self, freqs) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 20 * np.log10(np.abs(self.response(freqs)))

    def lfilter(self, x, zi=None):
        if zi is None:
            return sps.lfilter(self.b, self.a, x)
        return sps.lfilter(self.b, self.a, x, zi=zi)

    def zi_zero(self) -> np.ndarray:
        return np.zeros(self.order)

    def zi_steady(self, level: float) -> np.ndarray:
        """Internal state after an infinitely long constant input ``level``."""
        return sps.lfilter_zi(self.b, self.a) * level


def _check_band(f: float, fs: float, what: str) -> None:
    if not fs > 0:
        raise ValueError(f"sample rate must be positive, got {fs}")
    if not 0 < f < fs / 2:
        raise ValueError(f"{what} {f} Hz must lie strictly between 0 and fs/2 = {fs / 2} Hz")


def design_first_order(kind: str, fc: float, fs: float) -> FilterCoefficients:
    """First-order Butterworth low- or high-pass with -3 dB exactly at ``fc``."""
    _check_band(fc, fs, "cut-off")
    k = math.tan(math.pi * fc / fs)
    a1 = (k - 1) / (k + 1)
    if kind == "lowpass":
        g = k / (1 + k)
        return FilterCoefficients((g, g), (1.0, a1), fs)
    if kind == "highpass":
        g = 1 / (1 + k)
        return FilterCoefficients((g, -g), (1.0, a1), fs)
    raise ValueError(f"kind must be 'lowpass' or 'highpass', got {kind!r}")


def design_biquad_notch(f0: float, q: float, fs: float) -> FilterCoefficients:
    """Second-order notch with a transmission zero exactly at ``f0``.

    The analog prototype ``(s^2 + w0^2) / (s^2 + s w0/q + w0^2)`` is mapped
    with the bilinear transform, prewarped so the zero sits on ``f0``.
    DC and Nyquist gain are both exactly one.
    """
    _check_band(f0, fs, "notch frequency")
    if not q > 0:
        raise ValueError("quality factor must be positive")
    w0 = 2 * math.pi * f0 / fs
    cw = math.cos(w0)
    alpha = math.sin(w0) / (2 * q)
    a0 = 1 + alpha
    b = (1 / a0, -2 * cw / a0, 1 / a0)
    a = (1.0, -2 * cw / a0, (1 - alpha) / a0)
    return FilterCoefficients(b, a, fs)


def measure_gain(coeffs: FilterCoefficients, freq: float, duration: float = 4.0, settle: float = 2.0) -> float:
    """Steady-state amplitude ratio for a sine injected at ``freq``.

    The output tail is least-squares fitted with a sine/cosine pair at the
    injected frequency; the fit amplitude over the input amplitude is the
    gain. This is a simulation, independent of the analytic response.
    """
    fs = coeffs.fs
    n = int(round(duration * fs))
    m = int(round(settle * fs))
    t = np.arange(n) / fs
    if freq == 0:
        y = coeffs.lfilter(np.ones(n))
        return float(abs(np.mean(y[m:])))
    y = coeffs.lfilter(np.sin(2 * np.pi * freq * t))
    tt = t[m:]
    basis = np.column_stack([np.sin(2 * np.pi * freq * tt), np.cos(2 * np.pi * freq * tt)])
    sol, *_ = np.linalg.lstsq(basis, y[m:], rcond=None)
    return float(np.hypot(*sol))


def sweep_response(coeffs: FilterCoefficients, freqs, duration: float = 4.0, settle: float = 2.0) -> np.ndarray:
    """Measured gain in dB at each frequency via sine injection."""
    out = []
    for f in np.atleast_1d(freqs):
        g = measure_gain(coeffs, float(f), duration, settle)
        out.append(20 * math.log10(g) if g > 0 else -math.inf)
    return np.asarray(out)


def write_coefficients_csv(coeffs: FilterCoefficients, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "b", "a"])
        for i in range(coeffs.order + 1):
            b = coeffs.b[i] if i < len(coeffs.b) else 0.0
            a = coeffs.a[i] if i < len(coeffs.a) else 0.0
            w.writerow([i, repr(float(b)), repr(float(a))])
    return path


def write_sweep_csv(freqs, gains_db, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frequency_hz", "gain_db"])
        for f, g in zip(freqs, gains_db):
            w.writerow([repr(float(f)), repr(float(g))])
    return path
