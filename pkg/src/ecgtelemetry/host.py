"""Receiver-side session storage and reporting.

A session directory holds::

    session.bin    "ECGF" + version byte + raw 20-byte frames, as delivered
    meta.ndjson    one JSON object per line: header, annotations, link
                   statistics, screening flags/summary, power budget
    report.txt     human-readable summary
    *.csv          peaks, RR intervals, latency histogram
"""

from __future__ import annotations

import bisect
import csv
import io
import json
import time
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .link import Frame, LinkReport, PacketFormat, depacketize, read_session_file, write_session_file
from .power import EnergyBudget
from .screening import FLAG_KINDS, ScreeningReport
from .traces import SampleTrace

SESSION_BIN = "session.bin"
META = "meta.ndjson"
REPORT = "report.txt"
PARTIAL_SUFFIX = ".partial"


@dataclass(frozen=True)
class SessionRecord:
    session_id: str
    started_at: float
    fs: float
    frames: int
    samples: int
    pad: int = 0
    samples_per_frame: int = 12
    annotations: tuple = ()
    link_report: LinkReport | None = None
    screening: ScreeningReport | None = None
    budget: EnergyBudget | None = None
    directory: str | None = None

    @property
    def duration(self) -> float:
        return self.samples / self.fs


def record_session(delivered: Iterable[Frame], fmt: PacketFormat, sink, fs: float = 1000.0,
                   session_id: str | None = None, started_at: float | None = None,
                   link_report: LinkReport | None = None) -> SessionRecord:
    """Persist delivered frames verbatim and return the session's accounting.

    The frame file is written under a ``.partial`` name and renamed only
    once complete, so an interrupted write leaves the marker behind.
    """
    sink = Path(sink)
    sink.mkdir(parents=True, exist_ok=True)
    frames = list(delivered)
    partial = sink / (SESSION_BIN + PARTIAL_SUFFIX)
    try:
        write_session_file(partial, frames)
        partial.replace(sink / SESSION_BIN)
    except OSError as exc:
        raise OSError(f"failed writing session to {sink}; partial data left in {partial.name}") from exc
    pad = frames[-1].pad if frames else 0
    rec = SessionRecord(
        session_id=session_id or uuid.uuid4().hex[:12],
        started_at=time.time() if started_at is None else started_at,
        fs=fs,
        frames=len(frames),
        samples=len(frames) * fmt.samples_per_frame - pad,
        pad=pad,
        samples_per_frame=fmt.samples_per_frame,
        link_report=link_report,
        directory=str(sink),
    )
    write_meta(rec)
    return rec


def load_frames(session_dir) -> list[Frame]:
    return read_session_file(Path(session_dir) / SESSION_BIN)


def load_samples(session_dir, fmt: PacketFormat = PacketFormat(), fs: float = 1000.0) -> SampleTrace:
    return depacketize(load_frames(session_dir), fmt, fs)


def annotate(record: SessionRecord, t: float, text: str) -> SessionRecord:
    """Attach a timestamped free-text note; notes stay sorted by time."""
    if not 0 <= t <= record.duration:
        raise ValueError(f"annotation time {t} s outside session of {record.duration} s")
    notes = list(record.annotations)
    bisect.insort(notes, (float(t), str(text)), key=lambda a: a[0])
    return replace(record, annotations=tuple(notes))


def _meta_rows(rec: SessionRecord) -> list[dict]:
    rows = [{
        "record": "header",
        "session_id": rec.session_id,
        "started_at": rec.started_at,
        "fs": rec.fs,
        "frames": rec.frames,
        "samples": rec.samples,
        "pad": rec.pad,
        "samples_per_frame": rec.samples_per_frame,
    }]
    rows += [{"record": "annotation", "t": t, "text": txt} for t, txt in rec.annotations]
    if rec.link_report is not None:
        rows.append({"record": "link_report", **rec.link_report.as_dict()})
    if rec.screening is not None:
        rows += [{"record": "flag", "kind": f.kind, "start_s": f.start, "end_s": f.end} for f in rec.screening.flags]
        rows.append(rec.screening.summary())
    if rec.budget is not None:
        rows.append({"record": "power", **rec.budget.as_dict()})
    return rows


def write_meta(rec: SessionRecord) -> Path:
    if rec.directory is None:
        raise ValueError("session record has no directory")
    path = Path(rec.directory) / META
    path.write_text("".join(json.dumps(r) + "\n" for r in _meta_rows(rec)))
    return path


def read_meta(session_dir) -> list[dict]:
    text = (Path(session_dir) / META).read_text()
    return [json.loads(line) for line in text.splitlines() if line.strip()]


@dataclass
class Report:
    text: str
    csv: dict = field(default_factory=dict)

    def write(self, directory) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        out = [d / REPORT]
        out[0].write_text(self.text)
        for name, content in self.csv.items():
            p = d / name
            p.write_text(content)
            out.append(p)
        return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if np.isnan(v) else f"{v:.2f}"
    return str(v)


def generate_report(record: SessionRecord) -> Report:
    """Summarise heart rate, flags, link statistics and projected lifetime."""
    lines = [
        f"session_id: {record.session_id}",
        f"duration_s: {record.duration:.3f}",
        f"frames: {record.frames}",
        f"samples: {record.samples}",
    ]
    tables: dict[str, str] = {}
    scr = record.screening
    if scr is not None:
        lo, hi = scr.hr_range
        lines += [
            f"beats: {scr.r_peaks.size}",
            f"mean_hr_bpm: {_fmt(scr.mean_hr)}",
            f"min_hr_bpm: {_fmt(lo)}",
            f"max_hr_bpm: {_fmt(hi)}",
        ]
        lines += [f"{k}_flags: {scr.count(k)}" for k in FLAG_KINDS]
        for f in scr.flags:
            lines.append(f"flag: {f.kind} {f.start:.3f}-{f.end:.3f} s")
        for a, b in scr.marked_segments:
            lines.append(f"marked_for_review: {a:.3f}-{b:.3f} s")
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["sample_index", "t_seconds"])
        for i in scr.r_peaks:
            w.writerow([int(i), repr(float(i) / scr.fs)])
        tables["r_peaks.csv"] = buf.getvalue()
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["beat", "rr_seconds", "hr_bpm"])
        for i, rr in enumerate(scr.rr_intervals):
            w.writerow([i + 1, repr(float(rr)), repr(60.0 / float(rr))])
        tables["rr_intervals.csv"] = buf.getvalue()
    rep = record.link_report
    if rep is not None:
        lines += [
            f"packets_sent: {rep.frames_sent}",
            f"packets_retransmitted: {rep.retransmissions}",
            f"packets_lost_first_try: {rep.frames_lost_first_try}",
            f"packets_delivered: {rep.delivered_frames}",
            f"permanent_loss: {rep.frames_sent - rep.delivered_frames}",
            f"disconnects: {rep.disconnects}",
        ]
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["delay_intervals", "frames"])
        for k in sorted(rep.latency_histogram):
            w.writerow([k, rep.latency_histogram[k]])
        tables["latency_histogram.csv"] = buf.getvalue()
    if record.budget is not None:
        b = record.budget
        lines += [
            f"avg_current_uA: {b.total_avg:.1f}",
            f"battery_mAh: {b.battery_capacity:g}",
            f"projected_lifetime_h: {b.lifetime:.1f}",
        ]
    for t, txt in record.annotations:
        lines.append(f"note: {t:.3f} s {txt}")
    return Report("\n".join(lines) + "\n", tables)
