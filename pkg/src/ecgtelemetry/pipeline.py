"""End-to-end chain: synthetic ECG through front-end, ADC, link, host and screening."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .adc import dequantize, quantize
from .afe import attenuate_by_electrodes, input_referred, process_afe
from .config import RunConfig
from .host import SessionRecord, annotate, generate_report, record_session, write_meta
from .link import LinkReport, depacketize, packetize, simulate_session
from .power import EnergyBudget, budget
from .screening import ScreeningReport, remove_motion_artifact, screen
from .signal_gen import InterferenceTruth, common_mode_signal, inject_interference, synthesize_ecg
from .traces import SampleTrace

log = logging.getLogger(__name__)


@dataclass
class Signals:
    clean: SampleTrace
    corrupted: SampleTrace
    truth: InterferenceTruth
    common_mode: SampleTrace


@dataclass
class RunResult:
    signals: Signals
    afe_out: SampleTrace
    codes: SampleTrace
    received: SampleTrace      # dequantized, input referred mV
    conditioned: SampleTrace   # after motion-artifact/baseline removal
    link_report: LinkReport
    record: SessionRecord
    screening: ScreeningReport | None
    budget: EnergyBudget

    @property
    def disconnected(self) -> bool:
        return self.link_report.disconnects > 0


def synthesize(cfg: RunConfig) -> Signals:
    seed = cfg.seed_for("signal")
    clean = synthesize_ecg(cfg.ecg, cfg.duration, cfg.fs, seed)
    corrupted, truth = inject_interference(clean, cfg.interference, seed)
    cm = common_mode_signal(cfg.common_mode, cfg.duration, cfg.fs, seed)
    return Signals(clean, corrupted, truth, cm)


def run_pipeline(cfg: RunConfig, out_dir) -> RunResult:
    out_dir = Path(out_dir)
    sig = synthesize(cfg)
    diff = attenuate_by_electrodes(sig.corrupted, cfg.electrodes, cfg.afe.input_impedance)
    afe_out = process_afe(diff, sig.common_mode, cfg.afe, cfg.seed_for("noise"))
    codes = quantize(afe_out, cfg.adc)

    fmt = cfg.link.fmt
    frames = packetize(codes, fmt)
    delivered, report = simulate_session(
        frames, cfg.link.params, cfg.channel, cfg.link.packets_per_event,
        seed=cfg.seed_for("link"), frame_period=fmt.samples_per_frame / cfg.adc.fs,
    )
    log.info("link: %d/%d frames delivered, %d retransmissions", report.delivered_frames,
             report.frames_sent, report.retransmissions)

    record = record_session(delivered, fmt, out_dir, cfg.adc.fs, session_id=f"seed{cfg.seed}",
                            started_at=0.0, link_report=report)
    received = input_referred(dequantize(depacketize(delivered, fmt, cfg.adc.fs), cfg.adc), cfg.afe)
    conditioned = received
    scr = None
    if received.duration >= 2.0:
        conditioned = remove_motion_artifact(received, None, cfg.mar)
        scr = screen(conditioned, cfg.screening)
    bud = budget(cfg.power.profile, cfg.power.analog_supply, cfg.power.battery_capacity, cfg.power.coprocessor)
    record = replace(record, screening=scr, budget=bud)
    for t, text in cfg.annotations:
        record = annotate(record, t, text)
    write_meta(record)
    generate_report(record).write(out_dir)
    return RunResult(sig, afe_out, codes, received, conditioned, report, record, scr, bud)

