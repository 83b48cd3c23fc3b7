"""Simulation toolkit for an ultra-low-power ECG telemetry chain."""

from .traces import SampleTrace, read_csv, write_csv

__all__ = ["SampleTrace", "read_csv", "write_csv"]
__version__ = "0.1.0"
