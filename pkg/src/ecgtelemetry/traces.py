"""Uniformly sampled traces and their CSV representation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UNITS = ("microvolt", "millivolt", "volt", "adc-code", "milliamp")

_SCALE_TO_VOLT = {"microvolt": 1e-6, "millivolt": 1e-3, "volt": 1.0}


@dataclass(frozen=True)
class SampleTrace:
    """A uniformly sampled waveform.

    ``samples`` is stored as a read-only numpy array so traces can be
    shared between stages without defensive copies.
    """

    fs: float
    samples: np.ndarray = field(repr=False)
    unit: str = "millivolt"
    t0: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.fs) or self.fs <= 0:
            raise ValueError(f"sample rate must be positive, got {self.fs}")
        if self.unit not in UNITS:
            raise ValueError(f"unknown unit {self.unit!r}; expected one of {UNITS}")
        arr = np.asarray(self.samples)
        if arr.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if self.unit == "adc-code":
            arr = arr.astype(np.int64, copy=True)
        else:
            arr = arr.astype(np.float64, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.fs

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.fs

    def with_samples(self, samples, unit: str | None = None) -> "SampleTrace":
        return SampleTrace(self.fs, samples, unit or self.unit, self.t0)

    def to_unit(self, unit: str) -> "SampleTrace":
        """Rescale between voltage units."""
        if unit == self.unit:
            return self
        if self.unit not in _SCALE_TO_VOLT or unit not in _SCALE_TO_VOLT:
            raise ValueError(f"cannot convert {self.unit} to {unit}")
        k = _SCALE_TO_VOLT[self.unit] / _SCALE_TO_VOLT[unit]
        return SampleTrace(self.fs, self.samples * k, unit, self.t0)


def write_csv(trace: SampleTrace, path) -> Path:
    """Write ``t_seconds,value`` rows; sample rate and unit go in a comment line."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# fs={trace.fs!r} unit={trace.unit} t0={trace.t0!r}\n")
        w = csv.writer(fh)
        w.writerow(["t_seconds", "value"])
        fmt = (lambda v: str(int(v))) if trace.unit == "adc-code" else repr
        for t, v in zip(trace.times, trace.samples):
            w.writerow([repr(float(t)), fmt(v.item())])
    return path


def read_csv(path, fs: float | None = None, unit: str | None = None) -> SampleTrace:
    """Read a trace written by :func:`write_csv`.

    Files without the metadata comment are accepted when ``fs`` is given
    or can be inferred from the time column.
    """
    meta: dict[str, str] = {}
    times: list[float] = []
    values: list[float] = []
    with Path(path).open(newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                for tok in line[1:].split():
                    k, _, v = tok.partition("=")
                    meta[k] = v
                continue
            row = next(csv.reader([line]))
            if not row or row[0] == "t_seconds":
                continue
            times.append(float(row[0]))
            values.append(float(row[1]))
    if fs is None:
        if "fs" in meta:
            fs = float(meta["fs"])
        elif len(times) >= 2:
            fs = 1.0 / float(np.median(np.diff(times)))
        else:
            raise ValueError("cannot infer sample rate; pass fs explicitly")
    unit = unit or meta.get("unit", "millivolt")
    t0 = float(meta.get("t0", times[0] if times else 0.0))
    return SampleTrace(fs, np.asarray(values), unit, t0)
