"""Energy model of the sensor node.

Covers the transmitter duty-cycle average, the per-connection-interval
current budget from the radio phase table, and battery lifetime.
Units: mA and µs for phases, µA for averages, mAh for capacity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .traces import SampleTrace

PHASE_NAMES = ("setup", "xo_startup", "rx", "tx", "transition")


@dataclass(frozen=True)
class TxPowerParams:
    p_active: float    # mW
    t_packet: float    # s
    p_leakage: float   # mW
    t_interval: float  # s

    def __post_init__(self):
        if min(self.p_active, self.t_packet, self.p_leakage, self.t_interval) < 0:
            raise ValueError("transmitter power parameters must be non-negative")
        if self.t_packet + self.t_interval <= 0:
            raise ValueError("t_packet + t_interval must be positive")


@dataclass(frozen=True)
class Phase:
    name: str
    current: float   # mA
    duration: float  # µs
    repetitions: int = 1

    def __post_init__(self):
        if self.name not in PHASE_NAMES:
            raise ValueError(f"unknown phase {self.name!r}; expected one of {PHASE_NAMES}")
        if self.current < 0 or self.duration < 0 or self.repetitions < 0:
            raise ValueError("phase current, duration and repetitions must be non-negative")

    @property
    def charge(self) -> float:
        """mA·µs"""
        return self.current * self.duration * self.repetitions

    @property
    def total_time(self) -> float:
        return self.duration * self.repetitions


@dataclass(frozen=True)
class ConnectionEventProfile:
    phases: tuple = ()
    t_interval: float = 0.1          # s
    sleep_current: float = 0.050     # mA, co-processor only
    no_coprocessor_current: float = 3.0  # mA, main CPU kept awake

    def __post_init__(self):
        if self.t_interval <= 0:
            raise ValueError("t_interval must be positive")
        if self.sleep_current < 0 or self.no_coprocessor_current < 0:
            raise ValueError("currents must be non-negative")
        if self.active_time > self.t_interval * 1e6 * (1 + 1e-12):
            raise ValueError(
                f"phases last {self.active_time:g} µs, longer than the {self.t_interval * 1e6:g} µs interval"
            )

    @property
    def active_time(self) -> float:
        """µs"""
        return sum(p.total_time for p in self.phases)

    @property
    def active_charge(self) -> float:
        """mA·µs"""
        return sum(p.charge for p in self.phases)


def nominal_profile(t_interval: float = 0.1, sleep_current: float = 0.050) -> ConnectionEventProfile:
    """Measured cc2650 phase table for one 100 ms connection interval."""
    return ConnectionEventProfile(
        phases=(
            Phase("setup", 3.99, 132),
            Phase("xo_startup", 3.22, 1165),
            Phase("rx", 6.48, 129),
            Phase("tx", 7.66, 1880),
            Phase("transition", 5.49, 149, 6),
        ),
        t_interval=t_interval,
        sleep_current=sleep_current,
    )


@dataclass(frozen=True)
class EnergyBudget:
    digital_avg: float               # µA
    analog_supply: float = 3.0       # µA
    battery_capacity: float = 150.0  # mAh
    total_avg: float = field(init=False)
    lifetime: float = field(init=False)  # h

    def __post_init__(self):
        object.__setattr__(self, "total_avg", self.digital_avg + self.analog_supply)
        object.__setattr__(self, "lifetime", battery_lifetime(self.battery_capacity, self.total_avg))

    def as_dict(self) -> dict:
        return {
            "digital_avg_uA": self.digital_avg,
            "analog_supply_uA": self.analog_supply,
            "total_avg_uA": self.total_avg,
            "battery_capacity_mAh": self.battery_capacity,
            "lifetime_h": self.lifetime,
            "lifetime_days": self.lifetime / 24,
        }


def avg_power_tx(p: TxPowerParams) -> float:
    """Duty-cycled transmitter average power in mW."""
    return (p.p_active * p.t_packet + p.p_leakage * p.t_interval) / (p.t_packet + p.t_interval)


def avg_current_interval(profile: ConnectionEventProfile, include_sleep: bool = True) -> float:
    """Average current over one connection interval, µA.

    With ``include_sleep`` the co-processor sleep current fills the part of
    the interval not covered by radio phases; without it only the phase
    charge is averaged, which is the figure quoted for the radio alone.
    """
    t_us = profile.t_interval * 1e6
    avg = profile.active_charge / t_us
    if include_sleep:
        avg += profile.sleep_current * (t_us - profile.active_time) / t_us
    return avg * 1e3


def battery_lifetime(capacity: float, i_avg: float) -> float:
    """Hours of operation; ``math.inf`` when nothing is drawn."""
    if capacity < 0 or i_avg < 0:
        raise ValueError("capacity and current must be non-negative")
    if capacity == 0:
        return 0.0
    if i_avg == 0:
        return math.inf
    return capacity * 1000 / i_avg


def event_current_waveform(profile: ConnectionEventProfile) -> SampleTrace:
    """Piecewise-constant current draw over one interval at 1 µs resolution, mA."""
    n = int(round(profile.t_interval * 1e6))
    i = np.full(n, profile.sleep_current)
    pos = 0.0
    for p in profile.phases:
        for _ in range(p.repetitions):
            lo, hi = int(round(pos)), int(round(pos + p.duration))
            i[lo:hi] = p.current
            pos += p.duration
    return SampleTrace(1e6, i, "milliamp")


def budget(profile: ConnectionEventProfile, analog_supply: float = 3.0,
           battery_capacity: float = 150.0, coprocessor: bool = True) -> EnergyBudget:
    """System energy budget; without the co-processor the digital side never sleeps."""
    if coprocessor:
        digital = avg_current_interval(profile)
    else:
        digital = profile.no_coprocessor_current * 1e3
    return EnergyBudget(digital, analog_supply, battery_capacity)


def tx_params_from_profile(profile: ConnectionEventProfile, supply_voltage: float = 3.0) -> TxPowerParams:
    """Collapse a phase table into the two-level active/leakage model."""
    t_active = profile.active_time * 1e-6
    i_active = profile.active_charge / profile.active_time if profile.active_time else 0.0
    return TxPowerParams(
        p_active=i_active * supply_voltage,
        t_packet=t_active,
        p_leakage=profile.sleep_current * supply_voltage,
        t_interval=max(profile.t_interval - t_active, 0.0),
    )
