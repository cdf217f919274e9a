"""Excitation signals and measurement-noise contamination.

Every stochastic function takes an explicit ``seed``: an ``int``, a
``numpy.random.SeedSequence`` or a ``numpy.random.Generator``. Integer seeds
always map to the same PCG64 stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .dynamics import GRAVITY
from .errors import DomainError, NumericError


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Uniformly sampled real signal."""

    samples: np.ndarray
    dt: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1:
            raise DomainError("TimeSeries samples must be one-dimensional")
        if not self.dt > 0:
            raise DomainError("dt must be > 0")
        if not np.all(np.isfinite(samples)):
            raise NumericError("TimeSeries samples must be finite")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def rate(self):
        return 1.0 / self.dt

    @property
    def duration(self):
        return len(self.samples) * self.dt

    @property
    def times(self):
        return np.arange(len(self.samples)) * self.dt


@dataclass(frozen=True)
class AmplitudeRange:
    """Peak-acceleration range in multiples of g."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (0 < self.lo <= self.hi):
            raise DomainError(f"need 0 < lo <= hi, got ({self.lo}, {self.hi})")


def rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def white_noise(n: int, dt: float, seed) -> TimeSeries:
    """``n`` independent standard-normal samples."""
    if n <= 0:
        raise DomainError("white_noise needs n > 0")
    return TimeSeries(rng(seed).standard_normal(n), dt)


def scale_to_peak(series: TimeSeries, peak: float) -> TimeSeries:
    """Rescale so that ``max |samples| == peak``."""
    if not peak > 0:
        raise DomainError("peak must be > 0")
    current = np.max(np.abs(series.samples))
    if current == 0:
        raise DomainError("cannot scale an all-zero series")
    out = series.samples * (peak / current)
    # pin the extreme samples (ties included) so the peak is exact in floating point
    extreme = np.abs(series.samples) == current
    out = np.clip(out, -peak, peak)
    out[extreme] = np.copysign(peak, out[extreme])
    return TimeSeries(out, series.dt)


def draw_amplitude(amp_range: AmplitudeRange, seed) -> float:
    """Uniform peak acceleration in ``[lo*g, hi*g]`` (m/s^2)."""
    lo = amp_range.lo * GRAVITY
    hi = amp_range.hi * GRAVITY
    if lo == hi:
        return lo
    return float(rng(seed).uniform(lo, hi))


def harmonic(A: float, Omega: float, duration: float, dt: float, M: float) -> TimeSeries:
    """Force record ``F(k dt) = -A M cos(Omega k dt)``."""
    if min(A, Omega, duration, dt) <= 0:
        raise DomainError("A, Omega, duration and dt must be > 0")
    n = int(round(duration / dt))
    t = np.arange(n) * dt
    return TimeSeries(-A * M * np.cos(Omega * t), dt)


def bandpass(series: TimeSeries, f_lo: float, f_hi: float, order: int = 4) -> TimeSeries:
    """Zero-phase Butterworth band-pass (forward-backward)."""
    nyq = 0.5 / series.dt
    if not (0 < f_lo < f_hi < nyq):
        raise DomainError(f"band ({f_lo}, {f_hi}) Hz must satisfy 0 < lo < hi < {nyq}")
    sos = signal.butter(order, [f_lo, f_hi], btype="bandpass", fs=1.0 / series.dt, output="sos")
    return TimeSeries(signal.sosfiltfilt(sos, series.samples), series.dt)


def rms(x):
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.mean(x * x)))


def add_measurement_noise(series: TimeSeries, level: float, seed) -> TimeSeries:
    """Add white Gaussian noise whose RMS is ``level * RMS(series)``.

    The drawn noise is rescaled to the target RMS exactly.
    """
    if level < 0:
        raise DomainError("noise level must be >= 0")
    target = level * rms(series.samples)
    if target == 0:
        return TimeSeries(series.samples.copy(), series.dt)
    w = rng(seed).standard_normal(len(series))
    w *= target / rms(w)
    return TimeSeries(series.samples + w, series.dt)
