"""Behavioural model of the analog front-end.

Signal path (input referred, volts)::

    x = diff + cm / CMRR + noise
    y = HPF(NOTCH(LPF(x)))
    out = clamp(mid_rail + G * y)

``G`` collapses to unity while the baseline stabilizer is recovering from
a large input excursion (lead-off, electrode reattachment).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .filters import FilterCoefficients, design_biquad_notch, design_first_order
from .traces import SampleTrace


@dataclass(frozen=True)
class AfeConfig:
    g1_db: float = 30.0
    cmrr_stage2_db: float = 60.0
    total_gain_db: float = 68.0
    lpf_cutoff: float = 150.0
    hpf_cutoff: float = 0.05
    notch_freq: float = 50.0
    notch_q: float = 5.0
    input_impedance: float = 22e6
    input_noise_rms: float = 0.49  # µV, in-band, input referred
    supply_rails: tuple = (0.0, 3.0)
    mid_rail: float = 1.5
    stabilizer_threshold: float = 50.0  # mV, input referred
    stabilizer_recovery: float = 0.6    # s

    def __post_init__(self):
        if not self.total_gain_db > 0:
            raise ValueError("total_gain_db must be positive")
        if not 0.05 <= self.hpf_cutoff <= 1.0:
            raise ValueError("hpf_cutoff must lie in [0.05, 1] Hz")
        if not self.notch_q > 0:
            raise ValueError("notch_q must be positive")
        lo, hi = self.supply_rails
        if not lo < self.mid_rail < hi:
            raise ValueError("mid_rail must lie strictly between the supply rails")
        if self.input_noise_rms < 0:
            raise ValueError("input_noise_rms must be non-negative")
        if self.stabilizer_threshold <= 0 or self.stabilizer_recovery < 0:
            raise ValueError("stabilizer threshold must be positive and recovery non-negative")
        if self.lpf_cutoff < 150:
            warnings.warn(
                f"low-pass cut-off {self.lpf_cutoff} Hz is below the 150 Hz diagnostic-bandwidth recommendation",
                stacklevel=2,
            )

    @property
    def cmrr_db(self) -> float:
        return cmrr_total(self.g1_db, self.cmrr_stage2_db)

    @property
    def gain(self) -> float:
        return 10 ** (self.total_gain_db / 20)


@dataclass(frozen=True)
class ElectrodeModel:
    impedance_per_electrode: float = 354e3
    mismatch: float = 0.0

    def __post_init__(self):
        if self.impedance_per_electrode < 0:
            raise ValueError("electrode impedance must be non-negative")
        if not 0 <= self.mismatch <= 1:
            raise ValueError("mismatch must lie in [0, 1]")

    @property
    def source_impedance(self) -> float:
        return self.impedance_per_electrode * (1 + self.mismatch)


@dataclass(frozen=True)
class StabilizerState:
    mode: str = "normal"  # or "unity-gain-recovery"
    entered_at: float = 0.0


def cmrr_total(g1_db: float, cmrr_stage2_db: float) -> float:
    """Two-stage IA common-mode rejection: first-stage gain adds to stage-2 CMRR."""
    if not (math.isfinite(g1_db) and math.isfinite(cmrr_stage2_db)):
        raise ValueError("CMRR terms must be finite")
    return g1_db + cmrr_stage2_db


def attenuate_by_electrodes(diff: SampleTrace, model: ElectrodeModel, input_impedance: float = 22e6) -> SampleTrace:
    if diff.unit != "millivolt":
        raise ValueError("electrode model expects a millivolt trace")
    k = input_impedance / (input_impedance + model.source_impedance)
    return diff.with_samples(diff.samples * k)


def stabilizer_step(state: StabilizerState, sample_deviation: float, cfg: AfeConfig, t: float) -> StabilizerState:
    """Advance the baseline stabilizer by one observation.

    ``sample_deviation`` is the input-referred excursion from baseline in mV.
    """
    if state.mode == "normal":
        if abs(sample_deviation) > cfg.stabilizer_threshold:
            return StabilizerState("unity-gain-recovery", t)
        return state
    if t - state.entered_at >= cfg.stabilizer_recovery - 1e-12:
        return StabilizerState("normal", t)
    return state


class AfeProcessor:
    """Streaming front-end; holds filter and stabilizer state between chunks.

    Feeding a record in chunks gives the same output as one call with the
    whole record. Not safe to share across threads mid-stream.
    """

    def __init__(self, cfg: AfeConfig, fs: float, seed: int = 0):
        self.cfg = cfg
        self.fs = float(fs)
        self.stages: list[FilterCoefficients] = [
            design_first_order("lowpass", min(cfg.lpf_cutoff, 0.45 * fs), fs),
            design_biquad_notch(cfg.notch_freq, cfg.notch_q, fs),
            design_first_order("highpass", cfg.hpf_cutoff, fs),
        ]
        self.zi = [s.zi_zero() for s in self.stages]
        self.state = StabilizerState()
        self.n = 0
        self._rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
        self._noise_scale = cfg.input_noise_rms * 1e-6 / self._noise_gain()
        self._hist = np.zeros(0)
        self._hist_start = 0
        self._step_onset = 0
        self._step_size = 0.0
        # offset held by the stabilizer after a recovery, subtracted at the input
        self._offset = 0.0
        self.events: list[tuple[float, str]] = []

    def _noise_gain(self) -> float:
        # rms gain of the filter chain for white input
        w = np.linspace(0, np.pi, 1 << 15)
        h = np.ones_like(w, dtype=complex)
        for s in self.stages:
            h *= sps.freqz(s.b, s.a, worN=w)[1]
        return float(np.sqrt(np.mean(np.abs(h) ** 2)))

    def _cascade(self, x, zi):
        zf = []
        y = x
        for s, z in zip(self.stages, zi):
            y, z = s.lfilter(y, z)
            zf.append(z)
        return y, zf

    def _hist_at(self, idx: int) -> float:
        return float(self._hist[idx - self._hist_start])

    def _locate_step(self, k: int) -> None:
        """Find the onset and size of the excursion that triggered at sample ``k``."""
        lo = max(self._hist_start + 2, k - int(0.025 * self.fs))
        seg = self._hist[lo - 2 - self._hist_start:k + 1 - self._hist_start]
        if seg.size < 3:
            self._step_onset, self._step_size = k, 0.0
            return
        jumps = np.abs(np.diff(seg))[1:]
        j = int(np.argmax(jumps)) + lo
        # linear extrapolation of the pre-step trend removes the signal slope
        predicted = 2 * self._hist_at(j - 1) - self._hist_at(j - 2)
        self._step_onset = j
        self._step_size = self._hist_at(j) - predicted

    def _recentre(self, end: int) -> None:
        """Cancel the excursion: hold it as an input offset and strip its
        contribution from every filter state, so the chain continues as if
        the step had never happened."""
        span = end - self._step_onset
        if abs(self._step_size) * 1e3 > 0.5 * self.cfg.stabilizer_threshold and span > 0:
            _, zs = self._cascade(np.full(span, self._step_size), [s.zi_zero() for s in self.stages])
            self.zi = [z - d for z, d in zip(self.zi, zs)]
            self._offset += self._step_size
        else:
            # no clean step found: settle everything on the recent input level
            recent = self._hist[max(0, end - int(0.02 * self.fs) - self._hist_start):end - self._hist_start]
            self._offset = float(np.mean(recent)) if recent.size else self._offset
            self.zi = [s.zi_zero() for s in self.stages]
        self.events.append((end / self.fs, "recovered"))

    def process(self, diff_mv, cm_v=None) -> np.ndarray:
        """Process a chunk; returns output volts."""
        cfg = self.cfg
        diff_mv = np.asarray(diff_mv, float)
        n = diff_mv.size
        x = diff_mv * 1e-3
        if cm_v is not None:
            cm_v = np.asarray(cm_v, float)
            if cm_v.size != n:
                raise ValueError("differential and common-mode chunks differ in length")
            x = x + cm_v / 10 ** (cfg.cmrr_db / 20)
        if self._noise_scale > 0:
            x = x + self._noise_scale * self._rng.standard_normal(n)
        keep = int(1.0 * self.fs)
        self._hist = np.concatenate([self._hist, x])
        base = self.n
        y = np.empty(n)
        gain = np.empty(n)
        thr = cfg.stabilizer_threshold * 1e-3
        rec = int(round(cfg.stabilizer_recovery * self.fs))
        i = 0
        while i < n:
            if self.state.mode == "normal":
                seg, zf = self._cascade(x[i:] - self._offset, self.zi)
                over = np.flatnonzero(np.abs(seg) > thr)
                if over.size == 0:
                    y[i:], gain[i:] = seg, cfg.gain
                    self.zi = zf
                    break
                k = int(over[0])
                y[i:i + k + 1] = seg[:k + 1]
                gain[i:i + k] = cfg.gain
                gain[i + k] = 1.0
                _, self.zi = self._cascade(x[i:i + k + 1] - self._offset, self.zi)
                t = (base + i + k) / self.fs
                self.state = stabilizer_step(self.state, seg[k] * 1e3, cfg, t)
                self.events.append((t, "triggered"))
                self._locate_step(base + i + k)
                i += k + 1
            else:
                exit_at = int(round(self.state.entered_at * self.fs)) + rec
                stop = min(n, max(i, exit_at - base))
                if stop > i:
                    y[i:stop], self.zi = self._cascade(x[i:stop] - self._offset, self.zi)
                    gain[i:stop] = 1.0
                if base + stop >= exit_at:
                    self.state = stabilizer_step(self.state, 0.0, cfg, exit_at / self.fs)
                    self._recentre(exit_at)
                i = stop
                if stop == n:
                    break
        self.n += n
        if self._hist.size > keep:
            drop = self._hist.size - keep
            self._hist = self._hist[drop:]
            self._hist_start += drop
        lo, hi = cfg.supply_rails
        return np.clip(cfg.mid_rail + gain * y, lo, hi)


def process_afe(diff: SampleTrace, cm: SampleTrace | None, cfg: AfeConfig, seed: int = 0) -> SampleTrace:
    """Run the whole front-end over a differential (mV) and common-mode (V) pair."""
    if diff.unit != "millivolt":
        raise ValueError("differential input must be in millivolts")
    cm_samples = None
    if cm is not None:
        if cm.unit != "volt":
            raise ValueError("common-mode input must be in volts")
        if cm.fs != diff.fs or len(cm) != len(diff):
            raise ValueError("differential and common-mode traces must share fs and length")
        cm_samples = cm.samples
    proc = AfeProcessor(cfg, diff.fs, seed)
    out = proc.process(diff.samples, cm_samples)
    return SampleTrace(diff.fs, out, "volt", diff.t0)


def input_referred(out: SampleTrace, cfg: AfeConfig) -> SampleTrace:
    """Map front-end output volts back to input-referred millivolts."""
    if out.unit != "volt":
        raise ValueError("expected a volt trace")
    return SampleTrace(out.fs, (out.samples - cfg.mid_rail) / cfg.gain * 1e3, "millivolt", out.t0)

