"""Run configuration: one TOML file, one table per stage.

Example::

    seed = 7

    [signal]
    heart_rate = 72
    duration = 30

    [channel]
    frame_loss = 0.2

    [power]
    phases = "nominal"        # or a list of {name, current_ma, duration_us, repetitions}

Unknown tables or keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .adc import AdcConfig
from .afe import AfeConfig, ElectrodeModel
from .link import ChannelModel, ConnectionParams, PacketFormat
from .power import ConnectionEventProfile, Phase, nominal_profile
from .screening import MarConfig, ScreeningConfig
from .signal_gen import EcgParams, InterferenceSpec, MotionBurst


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LinkSettings:
    params: ConnectionParams = ConnectionParams()
    fmt: PacketFormat = PacketFormat()
    packets_per_event: int = 5
    target_sps: float = 1000.0


@dataclass(frozen=True)
class PowerSettings:
    profile: ConnectionEventProfile = field(default_factory=nominal_profile)
    analog_supply: float = 3.0       # µA
    battery_capacity: float = 150.0  # mAh
    supply_voltage: float = 3.0      # V
    coprocessor: bool = True


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    signal_seed: int | None = None
    noise_seed: int | None = None
    link_seed: int | None = None
    duration: float = 30.0
    fs: float = 1000.0
    ecg: EcgParams = EcgParams()
    interference: InterferenceSpec = InterferenceSpec(baseline_wander=(0.1, 0.25), white_noise_rms=5.0)
    common_mode: InterferenceSpec = InterferenceSpec(powerline=(50.0, 1.5))
    electrodes: ElectrodeModel = ElectrodeModel()
    afe: AfeConfig = AfeConfig()
    adc: AdcConfig = AdcConfig()
    link: LinkSettings = LinkSettings()
    channel: ChannelModel = ChannelModel()
    power: PowerSettings = PowerSettings()
    screening: ScreeningConfig = ScreeningConfig()
    mar: MarConfig = MarConfig()
    annotations: tuple = ()

    def seed_for(self, stage: str) -> int:
        v = getattr(self, f"{stage}_seed")
        return self.seed if v is None else v


def _take(table: dict, section: str, allowed: set) -> dict:
    extra = set(table) - allowed
    if extra:
        raise ConfigError(f"[{section}] unknown keys: {sorted(extra)}")
    return table


def _names(cls) -> set:
    return {f.name for f in fields(cls)}


def _build(cls, kwargs: dict, section: str):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def _phases(value) -> tuple:
    if value == "nominal":
        return nominal_profile().phases
    if value in ("none", "empty"):
        return ()
    out = []
    for i, p in enumerate(value):
        try:
            out.append(Phase(p["name"], float(p["current_ma"]), float(p["duration_us"]), int(p.get("repetitions", 1))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"[power] phase {i}: {exc}") from exc
    return tuple(out)


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    cfg = RunConfig()
    top = {"seed", "signal_seed", "noise_seed", "link_seed"}
    sections = {"signal", "interference", "common_mode", "electrodes", "afe", "adc", "link",
                "channel", "power", "screening", "mar", "session"}
    unknown = set(data) - top - sections
    if unknown:
        raise ConfigError(f"unknown top-level entries: {sorted(unknown)}")
    kw = {k: data[k] for k in top if k in data}

    if "signal" in data:
        t = _take(dict(data["signal"]), "signal", _names(EcgParams) | {"duration", "fs"})
        if "duration" in t:
            kw["duration"] = float(t.pop("duration"))
        if "fs" in t:
            kw["fs"] = float(t.pop("fs"))
        for k in ("p_qrs_t_morphology", "missed_beats"):
            if k in t:
                t[k] = tuple(tuple(x) if isinstance(x, list) else x for x in t[k])
        kw["ecg"] = _build(EcgParams, t, "signal")

    def interference(section: str, base: InterferenceSpec) -> InterferenceSpec:
        t = _take(dict(data[section]), section, {
            "powerline_hz", "powerline_v", "wander_mv", "wander_hz", "white_noise_uv",
            "motion_bursts", "lead_off", "lead_off_offset_mv"})
        args = {}
        if "powerline_v" in t or "powerline_hz" in t:
            args["powerline"] = (float(t.get("powerline_hz", 50.0)), float(t.get("powerline_v", 1.5)))
            if args["powerline"][1] == 0:
                args["powerline"] = None
        if "wander_mv" in t or "wander_hz" in t:
            args["baseline_wander"] = (float(t.get("wander_mv", 0.0)), float(t.get("wander_hz", 0.25)))
            if args["baseline_wander"][0] == 0:
                args["baseline_wander"] = None
        if "white_noise_uv" in t:
            args["white_noise_rms"] = float(t["white_noise_uv"])
        if "motion_bursts" in t:
            try:
                args["motion_bursts"] = tuple(
                    MotionBurst(*b[:3], band=tuple(b[3]) if len(b) > 3 else (0.5, 10.0)) for b in t["motion_bursts"])
            except TypeError as exc:
                raise ConfigError(f"[{section}] motion_bursts: {exc}") from exc
        if "lead_off" in t:
            args["lead_off_events"] = tuple((float(s), float(d)) for s, d in t["lead_off"])
        if "lead_off_offset_mv" in t:
            args["lead_off_offset"] = float(t["lead_off_offset_mv"])
        try:
            return replace(base, **args)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {exc}") from exc

    if "interference" in data:
        kw["interference"] = interference("interference", cfg.interference)
    if "common_mode" in data:
        kw["common_mode"] = interference("common_mode", cfg.common_mode)
    if "electrodes" in data:
        kw["electrodes"] = _build(ElectrodeModel, _take(dict(data["electrodes"]), "electrodes", _names(ElectrodeModel)), "electrodes")
    if "afe" in data:
        t = _take(dict(data["afe"]), "afe", _names(AfeConfig))
        if "supply_rails" in t:
            t["supply_rails"] = tuple(t["supply_rails"])
        kw["afe"] = _build(AfeConfig, t, "afe")
    if "adc" in data:
        t = _take(dict(data["adc"]), "adc", _names(AdcConfig))
        kw["adc"] = _build(AdcConfig, {**t, "fs": t.get("fs", kw.get("fs", cfg.fs))}, "adc")
    elif "fs" in kw:
        kw["adc"] = _build(AdcConfig, {"fs": kw["fs"]}, "adc")
    if "link" in data:
        t = _take(dict(data["link"]), "link", _names(ConnectionParams) | _names(PacketFormat) | {"packets_per_event", "target_sps"})
        params = _build(ConnectionParams, {k: t[k] for k in _names(ConnectionParams) if k in t}, "link")
        fmt = _build(PacketFormat, {k: t[k] for k in _names(PacketFormat) if k in t}, "link")
        ppe = int(t.get("packets_per_event", 5))
        if ppe < 1:
            raise ConfigError("[link] packets_per_event must be at least 1")
        kw["link"] = LinkSettings(params, fmt, ppe, float(t.get("target_sps", 1000.0)))
    if "channel" in data:
        t = _take(dict(data["channel"]), "channel", {"frame_loss", "event_loss", "seed", "outages"})
        kw["channel"] = _build(ChannelModel, {
            "frame_loss_probability": float(t.get("frame_loss", 0.0)),
            "event_loss_probability": float(t.get("event_loss", 0.0)),
            "seed": int(t.get("seed", 0)),
            "outages": tuple((float(s), float(d)) for s, d in t.get("outages", ())),
        }, "channel")
    if "power" in data:
        t = _take(dict(data["power"]), "power", {
            "phases", "t_interval", "sleep_current_ma", "no_coprocessor_current_ma",
            "analog_supply_ua", "battery_mah", "supply_voltage", "coprocessor"})
        prof = _build(ConnectionEventProfile, {
            "phases": _phases(t.get("phases", "nominal")),
            "t_interval": float(t.get("t_interval", 0.1)),
            "sleep_current": float(t.get("sleep_current_ma", 0.050)),
            "no_coprocessor_current": float(t.get("no_coprocessor_current_ma", 3.0)),
        }, "power")
        kw["power"] = PowerSettings(prof, float(t.get("analog_supply_ua", 3.0)), float(t.get("battery_mah", 150.0)),
                                    float(t.get("supply_voltage", 3.0)), bool(t.get("coprocessor", True)))
    if "screening" in data:
        t = _take(dict(data["screening"]), "screening", _names(ScreeningConfig))
        if "qrs_band" in t:
            t["qrs_band"] = tuple(t["qrs_band"])
        kw["screening"] = _build(ScreeningConfig, t, "screening")
    if "mar" in data:
        kw["mar"] = _build(MarConfig, _take(dict(data["mar"]), "mar", _names(MarConfig)), "mar")
    if "session" in data:
        t = _take(dict(data["session"]), "session", {"annotations"})
        kw["annotations"] = tuple((float(a), str(b)) for a, b in t.get("annotations", ()))
    try:
        return replace(cfg, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _parse_scalar(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings on top of parsed TOML data."""
    data = {k: (dict(v) if isinstance(v, dict) else v) for k, v in data.items()}
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        parts = key.strip().split(".")
        if len(parts) == 1:
            data[parts[0]] = _parse_scalar(value.strip())
        elif len(parts) == 2:
            data.setdefault(parts[0], {})[parts[1]] = _parse_scalar(value.strip())
        else:
            raise ConfigError(f"override key {key!r} nests too deeply")
    return data


def load_config(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        try:
            data = tomllib.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    data = apply_overrides(data, overrides)
    if seed is not None:
        data["seed"] = seed
        for k in ("signal_seed", "noise_seed", "link_seed"):
            data.pop(k, None)
        if isinstance(data.get("channel"), dict):
            data["channel"]["seed"] = seed
        else:
            data["channel"] = {**(data.get("channel") or {}), "seed": seed}
    return config_from_dict(data)
