"""Figure rendering for the report paths.

Every function writes one PNG next to the CSV it illustrates and returns
the path. The non-interactive Agg backend is forced so figures render on
headless machines.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 0.9,
    "savefig.dpi": 120,
}


def size(scale: float = 1.0, ratio: float | None = None):
    width = 7.0 * scale
    ratio = ratio or (math.sqrt(5) - 1) / 2
    return width, width * ratio


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_traces(path, traces: dict, t_max: float | None = 10.0, r_peaks=None, marked=()) -> Path:
    """Stacked time plots, one axis per named trace."""
    with plt.rc_context(RC):
        n = max(1, len(traces))
        fig, axes = plt.subplots(n, 1, figsize=size(1.0, 0.25 * n + 0.2), sharex=True, squeeze=False)
        for ax, (name, tr) in zip(axes[:, 0], traces.items()):
            t = tr.times
            sel = slice(None) if t_max is None else t < tr.t0 + t_max
            ax.plot(t[sel], tr.samples[sel], color="k")
            ax.set_ylabel(f"{name}\n[{tr.unit}]")
            if r_peaks is not None and name == list(traces)[-1]:
                idx = np.asarray(r_peaks)
                idx = idx[idx < len(tr)]
                idx = idx[t[idx] < (tr.t0 + t_max if t_max else np.inf)]
                ax.plot(t[idx], tr.samples[idx], "rv", ms=4)
            for a, b in marked:
                ax.axvspan(a, b, color="tab:orange", alpha=0.2)
        axes[-1, 0].set_xlabel("time [s]")
        return _save(fig, path)


def plot_current_waveform(path, wave, average_ua: float | None = None, no_coprocessor_ma: float | None = None) -> Path:
    """Current draw over one connection interval."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=size(1.0))
        t_ms = np.arange(len(wave)) / wave.fs * 1e3
        ax.step(t_ms, wave.samples, where="post", color="k", label="with co-processor")
        if no_coprocessor_ma is not None:
            ax.axhline(no_coprocessor_ma, ls="--", color="tab:red", label="main CPU kept on")
        if average_ua is not None:
            ax.axhline(average_ua / 1e3, ls=":", color="tab:blue", label=f"average {average_ua:.0f} µA")
        ax.set_xlabel("time in interval [ms]")
        ax.set_ylabel("current [mA]")
        ax.legend(loc="upper right")
        return _save(fig, path)


def plot_response(path, freqs, gains_db, title: str = "") -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=size(0.8))
        g = np.maximum(np.asarray(gains_db, float), -200)
        ax.plot(freqs, g, color="k")
        ax.set_xlabel("frequency [Hz]")
        ax.set_ylabel("gain [dB]")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_sweep(path, param: str, rows: list[dict]) -> Path:
    """Average current and lifetime against the swept parameter."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=size(0.8))
        x = [r[param] for r in rows]
        ax.plot(x, [r["i_avg_ua"] for r in rows], "o-", color="k")
        ax.set_xlabel(param)
        ax.set_ylabel("average current [µA]")
        ax2 = ax.twinx()
        life = [r["lifetime_h"] for r in rows]
        ax2.plot(x, life, "s--", color="tab:blue", ms=3)
        ax2.set_ylabel("lifetime [h]", color="tab:blue")
        ax2.grid(False)
        return _save(fig, path)


def plot_latency(path, histogram: dict) -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=size(0.8))
        keys = sorted(histogram)
        ax.bar(keys, [histogram[k] for k in keys], color="0.4")
        ax.set_xlabel("delivery delay [connection intervals]")
        ax.set_ylabel("frames")
        ax.set_yscale("log")
        return _save(fig, path)
