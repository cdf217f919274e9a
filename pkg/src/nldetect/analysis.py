"""Frequency response curves by stepped-sine sweeps, and Morlet scalograms."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dynamics import GRAVITY, Model, apply_damage, rk4_tuple
from .errors import DomainError, InstabilityError
from .excitation import TimeSeries


@dataclass(frozen=True)
class FRCPoint:
    freq: float  # Hz
    A: float  # peak base acceleration, multiples of g
    amplitude: float  # m, steady-state max |x| of the reported DOF
    direction: str
    dof_amplitudes: tuple = ()


def frc_sweep(
    model: Model,
    A: float,
    freqs: Sequence[float],
    direction: str = "up",
    settle_cycles: int = 100,
    measure_cycles: int = 20,
    damage: float = 0.0,
    steps_per_cycle: int = 64,
    dof: int = 0,
    blowup: float = 10.0,
    max_dt: float = 5e-3,
):
    """Stepped-sine sweep under ``F(t) = -A g M cos(2 pi f t)``.

    Frequencies are visited in ascending order for ``direction="up"`` and
    descending order for ``"down"``; each one starts from the end state of
    the previous one, so the sweep follows the stable branch reachable from
    its direction. The first ``settle_cycles`` periods are discarded and the
    amplitude is the largest ``|x|`` over the following ``measure_cycles``.

    Parameters
    ----------
    A : float
        Peak base acceleration as a multiple of g.
    freqs : sequence of float
        Sorted ascending, in Hz.
    steps_per_cycle : int
        RK4 steps per excitation period; raised at low frequencies so the
        step never exceeds ``max_dt`` seconds.
    """
    freqs = np.asarray(freqs, dtype=float)
    if freqs.ndim != 1 or len(freqs) == 0:
        raise DomainError("freqs must be a non-empty 1-D grid")
    if np.any(freqs <= 0):
        raise DomainError("frequencies must be > 0")
    if np.any(np.diff(freqs) <= 0):
        raise DomainError("frequency grid must be strictly ascending")
    if direction not in ("up", "down"):
        raise DomainError("direction must be 'up' or 'down'")
    if settle_cycles < 1 or measure_cycles < 1:
        raise DomainError("settle and measure cycles must be >= 1")
    if A < 0:
        raise DomainError("A must be >= 0")

    model = apply_damage(model, damage)
    unit = np.asarray(model.base_force(1.0), dtype=float).ravel()
    coef = tuple(float(c) * A * GRAVITY for c in unit)
    nd = model.n_dof
    order = freqs if direction == "up" else freqs[::-1]

    y = (0.0,) * model.state_size
    points = []
    for f in order:
        w = 2.0 * math.pi * f
        spc = max(steps_per_cycle, math.ceil(1.0 / (f * max_dt)))
        dt = 1.0 / (f * spc)
        peak = [0.0] * nd
        # the phase restarts at each frequency; cos(w t) with t = k dt
        cos_tab = [math.cos(w * (0.5 * j) * dt) for j in range(2 * spc + 1)]
        for c in range(settle_cycles + measure_cycles):
            measuring = c >= settle_cycles
            for k in range(spc):
                c0, cm, c1 = cos_tab[2 * k], cos_tab[2 * k + 1], cos_tab[2 * k + 2]
                y = rk4_tuple(
                    model, y, dt,
                    tuple(q * c0 for q in coef),
                    tuple(q * cm for q in coef),
                    tuple(q * c1 for q in coef),
                )
                if measuring:
                    for i in range(nd):
                        a = abs(y[i])
                        if a > peak[i]:
                            peak[i] = a
            if not all(math.isfinite(v) for v in y) or abs(y[0]) > blowup:
                raise InstabilityError(f"sweep diverged at {f} Hz with dt={dt:.3g}", dt_int=dt)
        points.append(FRCPoint(float(f), float(A), peak[dof], direction, tuple(peak)))
    return points


def peak_frequency(points: Sequence[FRCPoint]) -> float:
    """Frequency of the largest recorded amplitude."""
    best = max(points, key=lambda p: p.amplitude)
    return best.freq


@dataclass(frozen=True, eq=False)
class Scalogram:
    freqs: np.ndarray  # Hz
    times: np.ndarray  # s
    magnitude: np.ndarray  # (len(freqs), len(times))


MORLET_W0 = 6.0


def _morlet_kernel(scale_s, dt, w0):
    half = int(math.ceil(5.0 * scale_s / dt))
    u = np.arange(-half, half + 1) * dt / scale_s
    return np.pi**-0.25 * np.exp(1j * w0 * u - 0.5 * u * u)


def cwt(series: TimeSeries, freqs: Sequence[float], w0: float = MORLET_W0):
    """Complex Morlet wavelet coefficients, one row per frequency.

    The scale for frequency ``f`` is ``w0 / (2 pi f)``. Coefficients use L1
    normalisation and are rescaled so that a unit-amplitude sine at ``f``
    gives magnitude close to 1 on its ridge.
    """
    freqs = np.asarray(freqs, dtype=float)
    nyq = 0.5 / series.dt
    if np.any(freqs <= 0) or np.any(freqs >= nyq):
        raise DomainError(f"frequencies must lie in (0, {nyq}) Hz")
    x = series.samples
    n = len(x)
    gain = 2.0 / (np.pi**-0.25 * math.sqrt(2.0 * math.pi))
    out = np.empty((len(freqs), n), dtype=complex)
    for i, f in enumerate(freqs):
        s = w0 / (2.0 * math.pi * f)
        h = _morlet_kernel(s, series.dt, w0)
        half = (len(h) - 1) // 2
        full = np.convolve(x, h, mode="full")
        out[i] = gain * (series.dt / s) * full[half : half + n]
    return out


def cwt_scalogram(series: TimeSeries, freqs: Sequence[float], w0: float = MORLET_W0) -> Scalogram:
    """Magnitude of :func:`cwt` on a frequency grid."""
    coeffs = cwt(series, freqs, w0)
    return Scalogram(np.asarray(freqs, dtype=float), series.times, np.abs(coeffs))


def ridge(scalogram: Scalogram):
    """Per-time frequency of maximum magnitude."""
    return scalogram.freqs[np.argmax(scalogram.magnitude, axis=0)]
