"""Duty-cycled packet link: framing, connection events and loss recovery.

Wire format of one frame (always 20 bytes)::

    byte 0       sequence number, increments mod 256
    bytes 1..18  samples, packed MSB-first, ``sample_bits`` each
    byte 19      flags: bit 0 retransmission, bits 1-2 reserved (zero),
                 bits 3-7 number of zero pad samples at the end

Loss recovery: the receiver watches the sequence byte, and after every
connection event returns a feedback record (cumulative position, highest
sequence seen, NACK list). The sender consumes it at the next successful
event and resends the missing frames ahead of new data.
"""

from __future__ import annotations

import csv
import heapq
import itertools
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .traces import SampleTrace

FRAME_SIZE = 20
SAMPLE_BYTES = 18
SEQ_MOD = 256
FLAG_RETRANSMIT = 0x01
PAD_SHIFT = 3
SESSION_MAGIC = b"ECGF"
SESSION_VERSION = 1
SUPERVISION_UNIT = 0.010  # s per multiplier count


class SequenceGapError(ValueError):
    """Raised when a frame stream skips sequence numbers."""

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"sequence gap: missing seq {self.missing}")


class ThroughputWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PacketFormat:
    sample_bits: int = 12
    samples_per_frame: int = 12

    def __post_init__(self):
        if not 1 <= self.sample_bits <= 16:
            raise ValueError("sample_bits must lie in [1, 16]")
        if self.samples_per_frame < 1:
            raise ValueError("samples_per_frame must be at least 1")
        if self.samples_per_frame * self.sample_bits > SAMPLE_BYTES * 8:
            raise ValueError(
                f"{self.samples_per_frame} x {self.sample_bits}-bit samples do not fit in {SAMPLE_BYTES} payload bytes"
            )
        if self.samples_per_frame - 1 >= 1 << (8 - PAD_SHIFT):
            raise ValueError("samples_per_frame too large for the pad-count field")


@dataclass(frozen=True)
class Frame:
    seq: int
    payload: bytes  # 19 bytes: packed samples + flags

    def __post_init__(self):
        if not 0 <= self.seq < SEQ_MOD:
            raise ValueError(f"seq {self.seq} is not a byte")
        if len(self.payload) != FRAME_SIZE - 1:
            raise ValueError(f"payload must be {FRAME_SIZE - 1} bytes, got {len(self.payload)}")

    @property
    def flags(self) -> int:
        return self.payload[-1]

    @property
    def pad(self) -> int:
        return self.flags >> PAD_SHIFT

    @property
    def is_retransmission(self) -> bool:
        return bool(self.flags & FLAG_RETRANSMIT)

    def with_flags(self, flags: int) -> "Frame":
        return Frame(self.seq, self.payload[:-1] + bytes([flags]))

    def marked_retransmission(self) -> "Frame":
        return self.with_flags(self.flags | FLAG_RETRANSMIT)

    def original(self) -> "Frame":
        return self.with_flags(self.flags & ~FLAG_RETRANSMIT)

    def to_bytes(self) -> bytes:
        return bytes([self.seq]) + self.payload

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Frame":
        if len(raw) != FRAME_SIZE:
            raise ValueError(f"frame must be {FRAME_SIZE} bytes, got {len(raw)}")
        return cls(raw[0], bytes(raw[1:]))


@dataclass(frozen=True)
class ConnectionParams:
    min_interval: float = 0.0075
    max_interval: float = 4.0
    slave_latency: int = 0
    supervision_timeout_multiplier: int = 3200
    active_interval: float = 0.1

    def __post_init__(self):
        if not 0 < self.min_interval <= self.active_interval <= self.max_interval:
            raise ValueError("need 0 < min_interval <= active_interval <= max_interval")
        for name in ("slave_latency", "supervision_timeout_multiplier"):
            v = getattr(self, name)
            if not 0 <= v <= 0xFFFF:
                raise ValueError(f"{name} must fit in two bytes")

    def at_max_interval(self) -> "ConnectionParams":
        return replace(self, active_interval=self.max_interval)


NOMINAL_PARAMS = ConnectionParams()
# packets a single connection event carries in each preset
PACKETS_PER_EVENT_NOMINAL = 5
PACKETS_PER_EVENT_THROUGHPUT = 9


@dataclass(frozen=True)
class ChannelModel:
    frame_loss_probability: float = 0.0
    event_loss_probability: float = 0.0
    seed: int = 0
    outages: tuple = ()  # ((start s, duration s), ...) during which every event fails

    def __post_init__(self):
        for p in (self.frame_loss_probability, self.event_loss_probability):
            if not 0 <= p < 1:
                raise ValueError("loss probabilities must lie in [0, 1)")


@dataclass(frozen=True)
class LinkReport:
    frames_sent: int
    frames_lost_first_try: int
    retransmissions: int
    events_elapsed: int
    failed_events: int
    disconnects: int
    delivered_frames: int
    delivered_in_order: bool
    disconnect_time: float | None = None
    duration: float = 0.0
    latency_histogram: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "frames_sent", "frames_lost_first_try", "retransmissions", "events_elapsed",
            "failed_events", "disconnects", "delivered_frames", "delivered_in_order",
            "disconnect_time", "duration")}
        d["latency_histogram"] = {str(k): v for k, v in sorted(self.latency_histogram.items())}
        return d

    def to_text(self) -> str:
        lines = []
        for k, v in self.as_dict().items():
            if k == "latency_histogram":
                continue
            lines.append(f"{k}: {v}")
        return "\n".join(lines) + "\n"

    def write_histogram_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["delay_intervals", "frames"])
            for k in sorted(self.latency_histogram):
                w.writerow([k, self.latency_histogram[k]])
        return path


# -- framing ------------------------------------------------------------------

def _pack(codes, bits: int) -> bytes:
    acc = 0
    for c in codes:
        acc = (acc << bits) | int(c)
    acc <<= SAMPLE_BYTES * 8 - bits * len(codes)
    return acc.to_bytes(SAMPLE_BYTES, "big")


def _unpack(raw: bytes, bits: int, count: int) -> list[int]:
    acc = int.from_bytes(raw, "big") >> (SAMPLE_BYTES * 8 - bits * count)
    mask = (1 << bits) - 1
    return [(acc >> (bits * (count - 1 - i))) & mask for i in range(count)]


def packetize(codes: SampleTrace, fmt: PacketFormat = PacketFormat(), start_seq: int = 0) -> list[Frame]:
    """Split a code stream into 20-byte frames; the last one is zero padded."""
    c = np.asarray(codes.samples if isinstance(codes, SampleTrace) else codes, dtype=np.int64)
    if c.size and (c.min() < 0 or c.max() >= 1 << fmt.sample_bits):
        raise ValueError(f"codes do not fit in {fmt.sample_bits} bits")
    if not 0 <= start_seq < SEQ_MOD:
        raise ValueError("start_seq must be a byte")
    spf = fmt.samples_per_frame
    frames = []
    for n, lo in enumerate(range(0, c.size, spf)):
        chunk = c[lo:lo + spf]
        pad = spf - chunk.size
        body = _pack(list(chunk) + [0] * pad, fmt.sample_bits)
        frames.append(Frame((start_seq + n) % SEQ_MOD, body + bytes([pad << PAD_SHIFT])))
    return frames


def depacketize(frames: Iterable[Frame], fmt: PacketFormat = PacketFormat(), fs: float = 1000.0) -> SampleTrace:
    frames = list(frames)
    missing = []
    for prev, cur in zip(frames, frames[1:]):
        step = (cur.seq - prev.seq) % SEQ_MOD
        if step != 1:
            missing.extend((prev.seq + k) % SEQ_MOD for k in range(1, step if step else SEQ_MOD))
    if missing:
        raise SequenceGapError(missing)
    out: list[int] = []
    spf = fmt.samples_per_frame
    for f in frames:
        vals = _unpack(f.payload[:SAMPLE_BYTES], fmt.sample_bits, spf)
        out.extend(vals[:spf - f.pad])
    return SampleTrace(fs, np.asarray(out, dtype=np.int64), "adc-code")


def frames_for_samples(n_samples: int, fmt: PacketFormat = PacketFormat()) -> int:
    return -(-n_samples // fmt.samples_per_frame)


# -- timing -------------------------------------------------------------------

def supervision_deadline(params: ConnectionParams) -> float:
    return params.supervision_timeout_multiplier * SUPERVISION_UNIT


def throughput(fmt: PacketFormat, packets_per_event: int, interval: float, target: float = 1000.0) -> float:
    """Sustained sample rate of the link; warns when it falls short of ``target``."""
    if interval <= 0:
        raise ValueError("interval must be positive")
    sps = fmt.samples_per_frame * packets_per_event / interval
    if target and sps < target:
        warnings.warn(
            f"link carries {sps:g} samples/s, below the {target:g} samples/s target",
            ThroughputWarning,
            stacklevel=2,
        )
    return sps


# -- simulation ---------------------------------------------------------------

@dataclass(frozen=True)
class Feedback:
    next_expected: int
    highest_seen: int
    nacks: tuple


class _Receiver:
    def __init__(self):
        self.next_expected = 0
        self.highest_seen = -1
        self.pending: dict[int, Frame] = {}
        self.delivered: list[Frame] = []
        self.delivered_at: list[int] = []

    def absolute(self, seq: int) -> int:
        return self.next_expected + (seq - self.next_expected) % SEQ_MOD

    def accept(self, frame: Frame, event: int) -> None:
        idx = self.absolute(frame.seq)
        self.highest_seen = max(self.highest_seen, idx)
        self.pending.setdefault(idx, frame.original())
        while self.next_expected in self.pending:
            self.delivered.append(self.pending.pop(self.next_expected))
            self.delivered_at.append(event)
            self.next_expected += 1

    def feedback(self) -> Feedback:
        gaps = tuple(i for i in range(self.next_expected, self.highest_seen + 1) if i not in self.pending)
        return Feedback(self.next_expected, self.highest_seen, tuple(i % SEQ_MOD for i in gaps))


class LinkSimulator:
    """Event-driven model of one connection.

    Events are ordered by (time in µs, insertion order). Frames become
    available at ``frame_period`` spacing; the sender holds at most one
    sequence epoch (256 frames) and pauses the source when full.
    """

    BUFFER = SEQ_MOD

    def __init__(self, frames: list[Frame], params: ConnectionParams, channel: ChannelModel,
                 packets_per_event: int, seed: int = 0, frame_period: float | None = None,
                 max_events: int | None = None):
        if packets_per_event < 1:
            raise ValueError("packets_per_event must be at least 1")
        self.frames = frames
        self.params = params
        self.channel = channel
        self.ppe = packets_per_event
        self.rng = np.random.default_rng(np.random.SeedSequence([int(channel.seed), int(seed)]))
        self.period_us = None if frame_period is None else int(round(frame_period * 1e6))
        self.interval_us = int(round(params.active_interval * 1e6))
        self.deadline_us = int(round(supervision_deadline(params) * 1e6))
        self.max_events = max_events
        self.outages = [(int(round(s * 1e6)), int(round((s + d) * 1e6))) for s, d in channel.outages]
        self._queue: list = []
        self._order = itertools.count()

        self.rx = _Receiver()
        self.base = 0            # oldest frame not yet confirmed
        self.admitted = 0        # frames handed over by the source
        self.next_new = 0        # next never-sent frame
        self.retx: list[int] = []
        self.inflight: list[int] = []
        self.pending_feedback: Feedback | None = None
        self.first_sent: dict[int, int] = {}
        self.lost_first = 0
        self.retransmissions = 0
        self.events = 0
        self.failed = 0
        self.skipped_in_row = 0
        self.disconnect_time: float | None = None
        self.last_success_us = 0
        self.now_us = 0

    def _push(self, t_us: int, kind: str, arg=None) -> None:
        heapq.heappush(self._queue, (t_us, next(self._order), kind, arg))

    def _due(self, t_us: int) -> int:
        if self.period_us is None:
            return len(self.frames)
        return min(len(self.frames), t_us // self.period_us)

    def _admit(self, t_us: int) -> None:
        self.admitted = max(self.admitted, min(self._due(t_us), self.base + self.BUFFER))

    def _consume_feedback(self) -> None:
        fb = self.pending_feedback
        if fb is None:
            return
        self.pending_feedback = None
        self.base = fb.next_expected
        nacked = set()
        for idx in self.inflight:
            if idx < fb.next_expected:
                continue
            if idx > fb.highest_seen or idx % SEQ_MOD in fb.nacks:
                nacked.add(idx)
        self.inflight = []
        self.retx = sorted(set(self.retx) | nacked)

    def _event_fails(self, t_us: int) -> bool:
        if any(lo <= t_us < hi for lo, hi in self.outages):
            return True
        return self.channel.event_loss_probability > 0 and self.rng.random() < self.channel.event_loss_probability

    def _done(self) -> bool:
        return self.rx.next_expected >= len(self.frames)

    def _connection_event(self, t_us: int, event: int) -> bool:
        """Run one connection event; False once the session is over."""
        if t_us - self.last_success_us > self.deadline_us:
            self.disconnect_time = t_us / 1e6
            return False
        self.events += 1
        if self._event_fails(t_us):
            self.failed += 1
            return True
        self._consume_feedback()
        self._admit(t_us)
        has_data = bool(self.retx) or self.next_new < self.admitted
        if not has_data and self.skipped_in_row < self.params.slave_latency:
            self.skipped_in_row += 1
            self.last_success_us = t_us
            return True
        self.skipped_in_row = 0
        self.last_success_us = t_us
        batch: list[int] = []
        while self.retx and len(batch) < self.ppe:
            batch.append(self.retx.pop(0))
        while len(batch) < self.ppe and self.next_new < self.admitted and self.next_new < self.base + self.BUFFER:
            batch.append(self.next_new)
            self.next_new += 1
        p = self.channel.frame_loss_probability
        for idx in batch:
            frame = self.frames[idx]
            first = idx not in self.first_sent
            if first:
                self.first_sent[idx] = event
            else:
                self.retransmissions += 1
                frame = frame.marked_retransmission()
            lost = p > 0 and self.rng.random() < p
            if lost:
                self.lost_first += first
            else:
                self.rx.accept(frame, event)
        self.inflight = batch
        self.pending_feedback = self.rx.feedback()
        return not self._done()

    def run(self):
        if self.period_us is not None:
            for k in range(1, len(self.frames) + 1):
                self._push(k * self.period_us, "frame")
        self._push(self.interval_us, "connection", 0)
        while self._queue and not self._done():
            t_us, _, kind, arg = heapq.heappop(self._queue)
            self.now_us = t_us
            if kind == "frame":
                self._admit(t_us)
                continue
            if self.max_events is not None and arg >= self.max_events:
                break
            if not self._connection_event(t_us, arg):
                break
            self._push(t_us + self.interval_us, "connection", arg + 1)
        return self.rx.delivered, self._report()

    def _report(self) -> LinkReport:
        delivered = self.rx.delivered
        in_order = all(
            a.to_bytes() == b.to_bytes() for a, b in zip(delivered, self.frames)
        ) and len(delivered) <= len(self.frames)
        hist = Counter(
            at - self.first_sent[i] for i, at in enumerate(self.rx.delivered_at)
        )
        return LinkReport(
            frames_sent=len(self.first_sent),
            frames_lost_first_try=self.lost_first,
            retransmissions=self.retransmissions,
            events_elapsed=self.events,
            failed_events=self.failed,
            disconnects=int(self.disconnect_time is not None),
            delivered_frames=len(delivered),
            delivered_in_order=in_order,
            disconnect_time=self.disconnect_time,
            duration=self.now_us / 1e6,
            latency_histogram=dict(hist),
        )


def simulate_session(frames_source: Iterable[Frame], params: ConnectionParams = NOMINAL_PARAMS,
                     channel: ChannelModel = ChannelModel(), packets_per_event: int = PACKETS_PER_EVENT_NOMINAL,
                     seed: int = 0, frame_period: float | None = None, max_events: int | None = None):
    """Push a frame stream through the duty-cycled link.

    Returns ``(delivered_frames, LinkReport)``. Disconnects end the session
    and are reported, not raised.
    """
    sim = LinkSimulator(list(frames_source), params, channel, packets_per_event, seed, frame_period, max_events)
    return sim.run()


# -- session file -------------------------------------------------------------

def write_session_file(path, frames: Iterable[Frame]) -> Path:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(SESSION_MAGIC + bytes([SESSION_VERSION]))
        for f in frames:
            fh.write(f.to_bytes())
    return path


def read_session_file(path) -> list[Frame]:
    raw = Path(path).read_bytes()
    if raw[:4] != SESSION_MAGIC:
        raise ValueError(f"{path}: not a frame session file")
    if len(raw) < 5 or raw[4] != SESSION_VERSION:
        raise ValueError(f"{path}: unsupported session version")
    body = raw[5:]
    if len(body) % FRAME_SIZE:
        raise ValueError(f"{path}: truncated frame ({len(body) % FRAME_SIZE} stray bytes)")
    return [Frame.from_bytes(body[i:i + FRAME_SIZE]) for i in range(0, len(body), FRAME_SIZE)]
