"""Command-line entry point.

Subcommands: synth, run, power, sweep, screen, link-sim. Outputs are
CSV/NDJSON/plain text, with PNG figures rendered alongside unless
``--no-figures`` is given. Exit codes: 0 success, 2 configuration error,
3 session ended by supervision timeout.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import plots
from .config import ConfigError, RunConfig, load_config
from .filters import write_coefficients_csv, write_sweep_csv
from .host import record_session
from .link import (ChannelModel, LinkReport, ThroughputWarning, packetize, read_session_file,
                   simulate_session, throughput, write_session_file)
from .pipeline import run_pipeline, synthesize
from .power import (avg_current_interval, avg_power_tx, battery_lifetime, budget,
                    event_current_waveform, tx_params_from_profile)
from .screening import remove_motion_artifact, screen
from .traces import SampleTrace, read_csv, write_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DISCONNECT = 3
OUT_ENV = "ECGTELEMETRY_OUT"

log = logging.getLogger("ecgtelemetry")

SWEEP_PARAMS = ("t_interval", "packets_per_event", "sleep_current", "battery_capacity", "analog_supply")


def _out_dir(args) -> Path:
    d = Path(args.out or os.environ.get(OUT_ENV) or "ecgtelemetry-out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _config(args) -> RunConfig:
    return load_config(args.config, args.set, args.seed)


def _kv(pairs) -> str:
    return "".join(f"{k}: {v}\n" for k, v in pairs)


# -- commands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    sig = synthesize(cfg)
    write_csv(sig.clean, out / "clean.csv")
    write_csv(sig.corrupted, out / "corrupted.csv")
    write_csv(sig.common_mode, out / "common_mode.csv")
    if args.figures and len(sig.clean):
        plots.plot_traces(out / "synth.png", {"clean": sig.clean, "corrupted": sig.corrupted})
    print(f"wrote {len(sig.clean)} samples to {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ThroughputWarning)
        sps = throughput(cfg.link.fmt, cfg.link.packets_per_event, cfg.link.params.active_interval, 0)
    if sps < cfg.link.target_sps:
        log.warning("link carries %.0f samples/s, below the %.0f samples/s source; the source will be paced by backpressure",
                    sps, cfg.link.target_sps)
    res = run_pipeline(cfg, out)
    write_csv(res.signals.clean, out / "clean.csv")
    write_csv(res.afe_out, out / "afe_out.csv")
    write_csv(res.received, out / "received.csv")
    if res.screening is not None:
        res.screening.write_ndjson(out / "screening.ndjson")
        res.screening.write_peaks_csv(out / "r_peaks.csv")
    res.link_report.write_histogram_csv(out / "latency_histogram.csv")
    (out / "link_report.txt").write_text(res.link_report.to_text())
    if args.figures and len(res.received):
        plots.plot_traces(out / "run.png", {"input": res.signals.corrupted, "afe": res.afe_out,
                                            "received": res.conditioned},
                          r_peaks=None if res.screening is None else res.screening.r_peaks,
                          marked=() if res.screening is None else res.screening.marked_segments)
        if res.link_report.latency_histogram:
            plots.plot_latency(out / "latency.png", res.link_report.latency_histogram)
    print((out / "report.txt").read_text(), end="")
    if res.disconnected:
        print(f"link lost at {res.link_report.disconnect_time:.2f} s (supervision timeout)", file=sys.stderr)
        return EXIT_DISCONNECT
    return EXIT_OK


def cmd_power(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    pw = cfg.power
    prof = pw.profile
    phases_only = avg_current_interval(prof, include_sleep=False)
    with_sleep = avg_current_interval(prof)
    bud = budget(prof, pw.analog_supply, pw.battery_capacity, pw.coprocessor)
    i_total = args.i_avg if args.i_avg is not None else bud.total_avg
    life = battery_lifetime(pw.battery_capacity, i_total)
    tx = tx_params_from_profile(prof, pw.supply_voltage)
    lines = [
        ("I_avg_digital", f"{phases_only:.0f} uA"),
        ("I_avg_digital_exact_uA", f"{phases_only:.4f}"),
        ("I_sleep_floor_uA", f"{with_sleep - phases_only:.4f}"),
        ("I_digital_with_sleep_uA", f"{with_sleep:.4f}"),
        ("I_no_coprocessor_uA", f"{prof.no_coprocessor_current * 1e3:.1f}"),
        ("I_analog_uA", f"{pw.analog_supply:.4f}"),
        ("I_total_uA", f"{i_total:.4f}"),
        ("P_avg_tx_mW", f"{avg_power_tx(tx):.5f}"),
        ("battery_mAh", f"{pw.battery_capacity:g}"),
        ("lifetime_h", f"{life:.1f}"),
        ("lifetime_days", f"{life / 24:.1f}"),
    ]
    text = "\n".join(f"{k} = {v}" for k, v in lines) + "\n"
    (out / "power_budget.txt").write_text(_kv(lines))
    wave = event_current_waveform(prof)
    with (out / "current_waveform.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_us", "mA"])
        for i, v in enumerate(wave.samples):
            w.writerow([i, repr(float(v))])
    if args.figures:
        plots.plot_current_waveform(out / "current_waveform.png", wave, with_sleep, prof.no_coprocessor_current)
    print(text, end="")
    return EXIT_OK


def parse_range(text: str) -> list[float]:
    """``start:stop:step`` (inclusive) or a comma-separated list."""
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ConfigError(f"range {text!r} must be start:stop:step with step > 0")
        start, stop, step = parts
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(max(n, 0))]
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse range {text!r}") from exc


def sweep_rows(cfg: RunConfig, param: str, values) -> list[dict]:
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep parameter {param!r}; choose from {SWEEP_PARAMS}")
    rows = []
    for v in values:
        prof = cfg.power.profile
        analog, cap, ppe = cfg.power.analog_supply, cfg.power.battery_capacity, cfg.link.packets_per_event
        interval = prof.t_interval
        try:
            if param == "t_interval":
                prof = replace(prof, t_interval=v)
                interval = v
            elif param == "sleep_current":
                prof = replace(prof, sleep_current=v)
            elif param == "battery_capacity":
                cap = v
            elif param == "analog_supply":
                analog = v
            elif param == "packets_per_event":
                ppe = int(v)
        except ValueError as exc:
            raise ConfigError(f"sweep value {param}={v}: {exc}") from exc
        bud = budget(prof, analog, cap, cfg.power.coprocessor)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ThroughputWarning)
            sps = throughput(cfg.link.fmt, ppe, interval, 0)
        rows.append({
            param: v,
            "i_avg_ua": bud.total_avg,
            "p_avg_mw": avg_power_tx(tx_params_from_profile(prof, cfg.power.supply_voltage)),
            "lifetime_h": bud.lifetime,
            "throughput_sps": sps,
            "below_target": int(sps < cfg.link.target_sps),
        })
    return rows


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    rows = sweep_rows(cfg, args.param, parse_range(args.range))
    path = out / f"sweep_{args.param}.csv"
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else [args.param])
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in r.items()})
    if args.figures and rows:
        plots.plot_sweep(out / f"sweep_{args.param}.png", args.param, rows)
    print(path.read_text(), end="")
    return EXIT_OK


def cmd_screen(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    try:
        trace = read_csv(args.trace)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read trace {args.trace}: {exc}") from exc
    if trace.unit not in ("millivolt", "microvolt", "volt"):
        raise ConfigError(f"screening needs a voltage trace, got {trace.unit}")
    trace = trace.to_unit("millivolt")
    ref = read_csv(args.reference).to_unit("millivolt") if args.reference else None
    cleaned = remove_motion_artifact(trace, ref, cfg.mar)
    try:
        rep = screen(cleaned, cfg.screening)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    write_csv(cleaned, out / "conditioned.csv")
    rep.write_ndjson(out / "screening.ndjson")
    rep.write_peaks_csv(out / "r_peaks.csv")
    if args.figures:
        plots.plot_traces(out / "screen.png", {"input": trace, "conditioned": cleaned},
                          r_peaks=rep.r_peaks, marked=rep.marked_segments)
    print(rep.to_ndjson(), end="")
    return EXIT_OK


def cmd_link_sim(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    fmt = cfg.link.fmt
    if args.frames:
        frames = read_session_file(args.frames)
    else:
        rng = np.random.default_rng(cfg.seed_for("signal"))
        n = int(round(cfg.duration * cfg.adc.fs))
        codes = SampleTrace(cfg.adc.fs, rng.integers(0, 1 << fmt.sample_bits, n), "adc-code")
        frames = packetize(codes, fmt)
    write_session_file(out / "sent.bin", frames)
    delivered, rep = simulate_session(frames, cfg.link.params, cfg.channel, cfg.link.packets_per_event,
                                      seed=cfg.seed_for("link"),
                                      frame_period=fmt.samples_per_frame / cfg.adc.fs)
    record_session(delivered, fmt, out, cfg.adc.fs, session_id=f"link-seed{cfg.seed}", started_at=0.0,
                   link_report=rep)
    (out / "link_report.txt").write_text(rep.to_text())
    rep.write_histogram_csv(out / "latency_histogram.csv")
    if args.figures and rep.latency_histogram:
        plots.plot_latency(out / "latency.png", rep.latency_histogram)
    print(rep.to_text(), end="")
    return EXIT_DISCONNECT if rep.disconnects else EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./ecgtelemetry-out)")
    common.add_argument("--seed", type=int, help="override every seed in the configuration")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration value (repeatable)")
    common.add_argument("--no-figures", dest="figures", action="store_false", help="skip PNG rendering")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ecgtelemetry", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write clean and corrupted ECG traces").set_defaults(func=cmd_synth)
    sub.add_parser("run", parents=[common], help="end-to-end session").set_defaults(func=cmd_run)
    sp = sub.add_parser("power", parents=[common], help="energy budget and current waveform")
    sp.add_argument("--i-avg", type=float, help="project lifetime at this total current (µA)")
    sp.set_defaults(func=cmd_power)
    sp = sub.add_parser("sweep", parents=[common], help="sweep one power/link parameter")
    sp.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    sp.add_argument("--range", required=True, help="start:stop:step or v1,v2,...")
    sp.set_defaults(func=cmd_sweep)
    sp = sub.add_parser("screen", parents=[common], help="screen an existing trace CSV")
    sp.add_argument("trace")
    sp.add_argument("--reference", help="artifact reference trace CSV for adaptive cancellation")
    sp.set_defaults(func=cmd_screen)
    sp = sub.add_parser("link-sim", parents=[common], help="frames-only link simulation")
    sp.add_argument("--frames", help="session.bin to replay instead of random codes")
    sp.set_defaults(func=cmd_link_sim)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
