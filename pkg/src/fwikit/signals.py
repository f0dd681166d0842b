"""Excitation pulses and sampled traces."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import TimeAxis

__all__ = [
    "Trace",
    "RickerParams",
    "ricker_sample",
    "ricker_trace",
    "reverse_trace",
    "save_trace_csv",
    "load_trace_csv",
    "magnitude_spectrum",
    "ShotGather",
]

_LN_SQRT2 = math.log(math.sqrt(2.0))


@dataclass(frozen=True, eq=False)
class Trace:
    """Uniformly sampled time series starting at ``t0``."""

    samples: np.ndarray = field(repr=False)
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64, copy=True).ravel()
        if samples.size < 2:
            raise ValueError("a trace needs at least two samples")
        if not np.all(np.isfinite(samples)):
            raise ValueError("trace samples must be finite")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t0", float(self.t0))

    def __len__(self):
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) * self.dt

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return self.dt == other.dt and self.t0 == other.t0 and np.array_equal(self.samples, other.samples)

    __hash__ = None


@dataclass(frozen=True)
class RickerParams:
    """Center frequency ``f0`` (Hz) and fractional half-power bandwidth ``b``."""

    f0: float = 1.0e6
    b: float = 0.9

    def __post_init__(self):
        if not self.f0 > 0:
            raise ValueError(f"f0 must be positive, got {self.f0}")
        if not 0 < self.b < 2:
            raise ValueError(f"b must lie in (0, 2), got {self.b}")

    @property
    def default_center(self) -> float:
        """Delay that puts the pulse onset near t = 0."""
        return 3.0 / (self.b * self.f0)


def ricker_sample(t, p: RickerParams):
    """``exp(-(b pi f0 t)^2 / ln sqrt 2) * sin(2 pi f0 t)``; accepts scalars or arrays."""
    t = np.asarray(t, dtype=np.float64)
    out = np.exp(-((p.b * np.pi * p.f0 * t) ** 2) / _LN_SQRT2) * np.sin(2.0 * np.pi * p.f0 * t)
    return float(out) if out.ndim == 0 else out


def ricker_trace(p: RickerParams, axis: TimeAxis, t_center: float | None = None, amplitude: float = 1.0) -> Trace:
    """Sample the pulse on ``axis`` delayed by ``t_center``.

    Warns if either end of the trace cuts the pulse above 1 % of its peak.
    """
    if t_center is None:
        t_center = p.default_center
    samples = amplitude * ricker_sample(axis.times - t_center, p)
    peak = np.max(np.abs(samples))
    if peak > 0 and max(abs(samples[0]), abs(samples[-1])) > 0.01 * peak:
        warnings.warn("Ricker pulse truncated by the time axis", RuntimeWarning, stacklevel=2)
    return Trace(samples, axis.dt)


def reverse_trace(tr: Trace) -> Trace:
    return Trace(tr.samples[::-1], tr.dt, tr.t0)


def save_trace_csv(tr: Trace, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "amplitude"])
        for t, a in zip(tr.times, tr.samples):
            writer.writerow([repr(float(t)), repr(float(a))])
    return path


def load_trace_csv(path) -> Trace:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t, a = data[:, 0], data[:, 1]
    dt = (t[-1] - t[0]) / (t.size - 1)
    return Trace(a, dt, t[0])


def magnitude_spectrum(tr: Trace, n_fft: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One-sided ``|DFT|`` of the trace (rectangular window) and its frequencies."""
    n = n_fft or len(tr)
    spec = np.abs(np.fft.rfft(tr.samples, n=n))
    freqs = np.fft.rfftfreq(n, d=tr.dt)
    return freqs, spec


@dataclass(frozen=True, eq=False)
class ShotGather:
    """Traces recorded at ``receivers`` for one emission.

    ``data`` has shape ``(n_receivers, n_samples)``; ``receivers`` holds
    ``(i, j)`` cell indices, one row per trace.
    """

    data: np.ndarray = field(repr=False)
    dt: float
    receivers: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        receivers = np.array(self.receivers, dtype=np.int64, copy=True).reshape(-1, 2)
        if data.ndim != 2 or data.shape[0] != receivers.shape[0]:
            raise ValueError(f"data shape {data.shape} does not match {receivers.shape[0]} receivers")
        if data.shape[1] < 2:
            raise ValueError("a gather needs at least two time samples")
        if not np.all(np.isfinite(data)):
            raise ValueError("gather samples must be finite")
        data.flags.writeable = False
        receivers.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "receivers", receivers)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n_receivers(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def trace(self, r: int) -> Trace:
        return Trace(self.data[r], self.dt)

    def with_data(self, data) -> "ShotGather":
        return ShotGather(data, self.dt, self.receivers)
