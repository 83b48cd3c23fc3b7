"""Host-side ECG conditioning and rhythm screening.

Pipeline: baseline and motion-artifact removal, QRS detection
(band-pass, derivative, squaring, moving-window integration, adaptive
threshold with refractory period), then RR-interval rhythm checks for
tachycardia, bradycardia and missed pulses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy import signal as sps

from .traces import SampleTrace

FLAG_KINDS = ("tachycardia", "bradycardia", "missed_pulse")


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class ScreeningConfig:
    tachy_threshold: float = 100.0
    brady_threshold: float = 60.0
    missed_pulse_factor: float = 1.5
    qrs_band: tuple = (5.0, 15.0)
    refractory: float = 0.2
    rate_window: int = 8  # RR intervals averaged for the rate checks
    rate_margin: float = 0.5  # bpm; absorbs sample-grid jitter of a rate sitting on a threshold

    def __post_init__(self):
        if not self.brady_threshold < self.tachy_threshold:
            raise ValueError("brady_threshold must be below tachy_threshold")
        if not self.missed_pulse_factor > 1:
            raise ValueError("missed_pulse_factor must exceed 1")
        if not self.refractory > 0:
            raise ValueError("refractory must be positive")
        if self.rate_window < 1 or self.rate_margin < 0:
            raise ValueError("rate_window must be >= 1 and rate_margin >= 0")
        lo, hi = self.qrs_band
        if not 0 < lo < hi:
            raise ValueError(f"invalid QRS band {self.qrs_band}")


@dataclass(frozen=True)
class MarConfig:
    baseline_window: float = 0.6
    adaptive_taps: int = 16
    adaptive_step: float = 0.05
    use_reference: bool = True
    baseline_deadband: float = 0.25  # fraction of typical beat peak-to-peak
    limit_window: float = 2.0
    limit_factor: float = 1.5

    def __post_init__(self):
        if not self.baseline_window > 0:
            raise ValueError("baseline_window must be positive")
        if self.adaptive_taps < 1:
            raise ValueError("adaptive_taps must be at least 1")
        if not 0 < self.adaptive_step < 2:
            raise ValueError("adaptive_step must lie in (0, 2)")
        if self.baseline_deadband < 0:
            raise ValueError("baseline_deadband must be non-negative")


@dataclass(frozen=True)
class Flag:
    kind: str
    start: float
    end: float


@dataclass
class ScreeningReport:
    r_peaks: np.ndarray
    rr_intervals: np.ndarray
    mean_hr: float
    flags: list = field(default_factory=list)
    marked_segments: list = field(default_factory=list)
    fs: float = 1000.0

    def count(self, kind: str) -> int:
        return sum(f.kind == kind for f in self.flags)

    @property
    def hr_range(self) -> tuple[float, float]:
        if self.rr_intervals.size == 0:
            return (float("nan"), float("nan"))
        hr = 60.0 / self.rr_intervals
        return float(hr.min()), float(hr.max())

    def summary(self) -> dict:
        lo, hi = self.hr_range
        return {
            "record": "summary",
            "beats": int(self.r_peaks.size),
            "mean_hr_bpm": self.mean_hr,
            "min_hr_bpm": lo,
            "max_hr_bpm": hi,
            **{f"{k}_flags": self.count(k) for k in FLAG_KINDS},
            "marked_segments": [[a, b] for a, b in self.marked_segments],
        }

    def to_ndjson(self) -> str:
        rows = [json.dumps({"kind": f.kind, "start_s": f.start, "end_s": f.end}) for f in self.flags]
        rows.append(json.dumps(self.summary()))
        return "\n".join(rows) + "\n"

    def write_ndjson(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_ndjson())
        return path

    def write_peaks_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w") as fh:
            fh.write("sample_index,t_seconds\n")
            for i in self.r_peaks:
                fh.write(f"{int(i)},{i / self.fs!r}\n")
        return path


# -- conditioning -------------------------------------------------------------

GATE_SPAN = 3.0  # s, envelope window of the baseline gate


def _odd_window(seconds: float, fs: float) -> int:
    n = int(round(seconds * fs))
    if n < 3:
        raise ValueError(f"window of {seconds} s is shorter than 3 samples at {fs} Hz")
    return n if n % 2 else n + 1


def typical_amplitude(x: np.ndarray, fs: float, window: float = 2.0) -> float:
    """Median over ``window``-long blocks of the block peak-to-peak value."""
    n = max(1, int(round(window * fs)))
    if x.size == 0:
        return 0.0
    blocks = [np.ptp(x[i:i + n]) for i in range(0, max(1, x.size - n + 1), n)]
    return float(np.median(blocks))


def remove_baseline(trace: SampleTrace, cfg: MarConfig = MarConfig()) -> SampleTrace:
    """Subtract a running-median baseline estimate.

    The median (``cfg.baseline_window`` long) is gated by a dead band of
    ``cfg.baseline_deadband`` times the typical beat amplitude before it is
    subtracted. Wide P/T waves pull a short running median off zero by
    up to ~20 % of the beat amplitude; the dead band keeps that from being
    carved out of a clean trace, while real wander (far larger) still goes.
    The gate follows a 3 s envelope of the estimate, so it opens and
    closes slowly and never carves notches into the trace.
    """
    w = _odd_window(cfg.baseline_window, trace.fs)
    x = trace.samples
    if x.size == 0:
        return trace
    base = ndimage.median_filter(x, size=w, mode="nearest")
    if cfg.baseline_deadband > 0:
        band = cfg.baseline_deadband * typical_amplitude(x - base, trace.fs)
        if band > 0:
            # Gate on a running envelope rather than the instantaneous level so
            # wander passing through zero does not switch the gate mid-swing.
            span = max(1, int(round(GATE_SPAN * trace.fs)))
            env = ndimage.maximum_filter1d(np.abs(base), size=span, mode="nearest")
            env = ndimage.uniform_filter1d(env, size=max(1, span // 3), mode="nearest")
            # closed below the band, fully open beyond twice the band, linear between
            base = base * np.clip(env / band - 1.0, 0.0, 1.0)
    return trace.with_samples(x - base)


def _nlms(d: np.ndarray, r: np.ndarray, taps: int, mu: float) -> np.ndarray:
    """Normalised LMS canceller: returns ``d`` minus the reference estimate."""
    w = np.zeros(taps)
    buf = np.zeros(taps)
    e = np.empty_like(d)
    eps = 1e-12 * (float(np.mean(r * r)) + np.finfo(float).tiny)
    for n in range(d.size):
        buf[1:] = buf[:-1]
        buf[0] = r[n]
        e[n] = d[n] - w @ buf
        w += (mu * e[n] / (eps + buf @ buf)) * buf
    return e


def _limit_outliers(x: np.ndarray, fs: float, cfg: MarConfig) -> np.ndarray:
    """Clip excursions well above the typical per-window peak amplitude."""
    n = int(round(cfg.limit_window * fs))
    if x.size < 2 * n or n < 1:
        return x
    peaks = np.array([np.max(np.abs(x[i:i + n])) for i in range(0, x.size - n + 1, n)])
    ref = float(np.median(peaks))
    if ref <= 0:
        return x
    lim = cfg.limit_factor * ref
    return np.clip(x, -lim, lim)


def remove_motion_artifact(trace: SampleTrace, reference: SampleTrace | None = None,
                           cfg: MarConfig = MarConfig()) -> SampleTrace:
    """Cancel in-band motion artifacts.

    With a reference channel an NLMS canceller runs first; the result (or
    the raw trace without a reference) then goes through baseline removal
    and amplitude limiting. An all-zero reference never adapts, so it gives
    exactly the reference-free result.
    """
    x = trace.samples
    if reference is not None and cfg.use_reference:
        if reference.fs != trace.fs or len(reference) != len(trace):
            raise ValueError("reference must share the trace's sample rate and length")
        if np.any(reference.samples):
            x = _nlms(x, reference.samples.astype(float), cfg.adaptive_taps, cfg.adaptive_step)
    cleaned = remove_baseline(trace.with_samples(x), cfg).samples
    return trace.with_samples(_limit_outliers(cleaned, trace.fs, cfg))


def snr_db(estimate: np.ndarray, truth: np.ndarray) -> float:
    err = np.asarray(estimate) - np.asarray(truth)
    return 10 * np.log10(np.sum(np.asarray(truth) ** 2) / np.sum(err**2))


# -- detection ----------------------------------------------------------------

def detect_qrs(trace: SampleTrace, cfg: ScreeningConfig = ScreeningConfig()) -> np.ndarray:
    """R-peak sample indices.

    Every threshold is a ratio of running signal/noise peak estimates, so
    the result does not depend on the trace's amplitude scale.
    """
    fs = trace.fs
    x = np.asarray(trace.samples, float)
    if x.size < 2 * fs:
        raise ValueError("QRS detection needs at least 2 s of signal")
    lo, hi = cfg.qrs_band
    sos = sps.butter(2, [lo, min(hi, 0.45 * fs)], btype="bandpass", fs=fs, output="sos")
    bp = sps.sosfiltfilt(sos, x - np.median(x))
    scale = np.max(np.abs(x - np.median(x)))
    if scale == 0 or np.max(np.abs(bp)) <= 1e-9 * scale:
        return np.zeros(0, dtype=np.int64)
    energy = np.gradient(bp) ** 2
    mwi = ndimage.uniform_filter1d(energy, size=max(1, int(round(0.15 * fs))), mode="nearest")
    refr = int(round(cfg.refractory * fs))
    cand, _ = sps.find_peaks(mwi, distance=max(1, refr // 2))
    if cand.size == 0:
        return np.zeros(0, dtype=np.int64)

    learn = mwi[: int(2 * fs)]
    spk = 0.25 * float(learn.max())
    npk = 0.5 * float(learn.mean())
    qrs: list[int] = []
    rr_avg = None
    for c in cand:
        thr = npk + 0.25 * (spk - npk)
        v = mwi[c]
        if v > thr and (not qrs or c - qrs[-1] >= refr):
            if qrs and rr_avg is not None and c - qrs[-1] > 1.66 * rr_avg:
                # search back for a beat the threshold let slip
                lost = cand[(cand > qrs[-1] + refr) & (cand < c - refr)]
                if lost.size:
                    best = lost[np.argmax(mwi[lost])]
                    if mwi[best] > 0.5 * thr:
                        qrs.append(int(best))
                        spk = 0.25 * mwi[best] + 0.75 * spk
            qrs.append(int(c))
            spk = 0.125 * v + 0.875 * spk
            if len(qrs) >= 2:
                recent = np.diff(qrs[-9:])
                rr_avg = float(np.mean(recent))
        else:
            npk = 0.125 * v + 0.875 * npk

    # locate the R wave itself: the band-passed maximum near each energy peak
    half = int(round(0.075 * fs))
    peaks = []
    for c in qrs:
        a, b = max(0, c - half), min(x.size, c + half + 1)
        peaks.append(a + int(np.argmax(bp[a:b])))
    peaks = np.unique(np.asarray(peaks, dtype=np.int64))
    keep: list[int] = []
    for p in peaks:
        if keep and p - keep[-1] < refr:
            if bp[p] > bp[keep[-1]]:
                keep[-1] = int(p)
            continue
        keep.append(int(p))
    return np.asarray(keep, dtype=np.int64)


# -- rhythm -------------------------------------------------------------------

def _merge(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    out: list[list[float]] = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1] + 1e-12:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [(a, b) for a, b in out]


def classify_rhythm(rr_intervals, cfg: ScreeningConfig = ScreeningConfig(), beat_times=None) -> list[Flag]:
    """Rate and missed-beat flags over an RR series.

    ``beat_times`` (length ``len(rr) + 1``) anchors the flags in time;
    without it the first beat is placed at 0 s.
    """
    rr = np.asarray(rr_intervals, float)
    if rr.size < 3:
        raise InsufficientDataError(f"need at least 3 RR intervals, got {rr.size}")
    if beat_times is None:
        beat_times = np.concatenate([[0.0], np.cumsum(rr)])
    beat_times = np.asarray(beat_times, float)
    spans = {k: [] for k in FLAG_KINDS}
    w = cfg.rate_window
    for i in range(rr.size):
        start, end = float(beat_times[i]), float(beat_times[i + 1])
        hr = 60.0 / float(np.mean(rr[max(0, i - w + 1): i + 1]))
        if hr > cfg.tachy_threshold + cfg.rate_margin:
            spans["tachycardia"].append((start, end))
        elif hr < cfg.brady_threshold - cfg.rate_margin:
            spans["bradycardia"].append((start, end))
        prev = rr[max(0, i - 8): i]
        if prev.size >= 3 and rr[i] > cfg.missed_pulse_factor * float(np.median(prev)):
            spans["missed_pulse"].append((start, end))
    flags = [Flag(k, a, b) for k in FLAG_KINDS for a, b in _merge(spans[k])]
    return sorted(flags, key=lambda f: (f.start, f.kind))


def screen(trace: SampleTrace, cfg: ScreeningConfig = ScreeningConfig()) -> ScreeningReport:
    """Detect beats and classify rhythm on a conditioned trace."""
    peaks = detect_qrs(trace, cfg)
    times = peaks / trace.fs + trace.t0
    rr = np.diff(times)
    flags = classify_rhythm(rr, cfg, times) if rr.size >= 3 else []
    mean_hr = 60.0 / float(np.mean(rr)) if rr.size else float("nan")
    marked = _merge([(f.start, f.end) for f in flags])
    return ScreeningReport(peaks, rr, mean_hr, flags, marked, trace.fs)
