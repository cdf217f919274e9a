"""Nonlinear benchmark oscillators and their fixed-step integration.

Three systems are provided, all in SI units:

- :class:`Duffing1Params`: single mass with cubic hardening spring.
- :class:`Duffing2Params`: two masses in series, cubic springs on both links.
- :class:`IsolatorParams`: seismic isolator combining a Bouc-Wen element,
  a negative-stiffness mechanism and a superelastic (SMA) element.

States are plain ``ndarray`` objects whose last axis holds the state
variables, so a batch of independent simulations is one array of shape
``(batch, state_size)``:

=========  ==========================
system     state layout
=========  ==========================
duffing1   ``[x, v]``
duffing2   ``[x1, x2, v1, v2]``
isolator   ``[x, v, z, fs]``
=========  ==========================

Damage is a uniform reduction of the stiffness terms, see :func:`apply_damage`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from functools import cached_property
from typing import Callable, ClassVar, Union

import numpy as np

from .errors import DomainError, InstabilityError, NumericError

GRAVITY = 9.81  # m/s^2

DT_INT = 4e-4  # s, internal RK4 step (2500 Hz)
OUTPUT_RATE = 250.0  # Hz


def _check(cond, msg):
    if not cond:
        raise DomainError(msg)


@dataclass(frozen=True)
class Duffing1Params:
    """``M x'' + C x' + K1 x + K3 x^3 = F``."""

    M: float
    C: float
    K1: float
    K3: float

    name: ClassVar[str] = "duffing1"
    n_dof: ClassVar[int] = 1
    state_size: ClassVar[int] = 2
    stiffness_fields: ClassVar[tuple] = ("K1", "K3")

    def __post_init__(self):
        _check(self.M > 0, "M must be > 0")
        _check(self.C >= 0, "C must be >= 0")
        _check(self.K1 > 0, "K1 must be > 0")
        _check(self.K3 >= 0, "K3 must be >= 0")

    @classmethod
    def reference(cls):
        return cls(M=412.0, C=405.95, K1=1.0e6, K3=1.0e9)

    def base_force(self, accel):
        accel = np.asarray(accel, dtype=float)
        return (-self.M * accel)[..., None]

    def rates(self, y, f):
        x, v = y
        return (v, (f[0] - self.C * v - self.K1 * x - self.K3 * x * x * x) / self.M)

    def energy(self, state):
        x = state[..., 0]
        v = state[..., 1]
        return 0.5 * self.M * v * v + 0.5 * self.K1 * x * x + 0.25 * self.K3 * x**4


@dataclass(frozen=True)
class Duffing2Params:
    """Two cubic oscillators in series; mass 1 is attached to the ground."""

    M1: float
    M2: float
    C1: float
    C2: float
    K11: float
    K21: float
    K13: float
    K23: float

    name: ClassVar[str] = "duffing2"
    n_dof: ClassVar[int] = 2
    state_size: ClassVar[int] = 4
    stiffness_fields: ClassVar[tuple] = ("K11", "K21", "K13", "K23")

    def __post_init__(self):
        _check(self.M1 > 0 and self.M2 > 0, "masses must be > 0")
        _check(self.C1 >= 0 and self.C2 >= 0, "dampings must be >= 0")
        _check(
            min(self.K11, self.K21, self.K13, self.K23) > 0,
            "stiffnesses must be > 0",
        )

    @classmethod
    def reference(cls):
        return cls(
            M1=400.0, M2=400.0, C1=400.0, C2=400.0,
            K11=1.0e6, K21=1.0e6, K13=1.0e9, K23=1.0e9,
        )

    def base_force(self, accel):
        # the base motion drives mass 1 only
        accel = np.asarray(accel, dtype=float)
        f1 = -self.M1 * accel
        return np.stack((f1, np.zeros_like(f1)), axis=-1)

    def rates(self, y, f):
        x1, x2, v1, v2 = y
        dx = x2 - x1
        link = self.C2 * (v2 - v1) + self.K21 * dx + self.K23 * dx * dx * dx
        a1 = (f[0] - self.C1 * v1 - self.K11 * x1 - self.K13 * x1 * x1 * x1 + link) / self.M1
        a2 = (f[1] - link) / self.M2
        return (v1, v2, a1, a2)


@dataclass(frozen=True)
class IsolatorParams:
    """Isolator with restoring force ``fr = fi + fn + fs``.

    ``fi`` is a Bouc-Wen element, ``fn`` a negative-stiffness mechanism active
    for ``|x| <= xf`` and ``fs`` a superelastic element. ``bw_beta``,
    ``bw_gamma`` and ``cs`` are in 1/m. ``a_tilde`` is dimensionless, applied
    in the kN-mm system the isolator was characterised in (see :attr:`a_s`).
    """

    M: float
    C: float
    Ki: float
    Kn: float
    K3: float
    xu: float
    xm: float
    xf: float
    bw_alpha: float
    bw_beta: float
    bw_gamma: float
    bw_n: float
    Ks: float
    Km: float
    Y: float
    alpha_s: float
    ys: float
    a_tilde: float
    cs: float
    ns: float

    name: ClassVar[str] = "isolator"
    n_dof: ClassVar[int] = 1
    state_size: ClassVar[int] = 4
    stiffness_fields: ClassVar[tuple] = ("Ki", "Kn")

    def __post_init__(self):
        _check(self.M > 0, "M must be > 0")
        _check(self.C >= 0, "C must be >= 0")
        _check(self.Ki > 0, "Ki must be > 0")
        _check(self.Kn >= 0, "Kn must be >= 0")
        _check(self.K3 >= 0, "K3 must be >= 0")
        _check(0 < self.bw_alpha < 1, "bw_alpha must lie in (0, 1)")
        _check(self.bw_n >= 1, "bw_n must be >= 1")
        _check(self.ns >= 1, "ns must be >= 1")
        _check(self.Y > 0, "Y must be > 0")
        _check(self.Ks > self.Km > 0, "need Ks > Km > 0")
        _check(0 <= self.ys < 2, "ys must lie in [0, 2)")
        _check(self.alpha_s > 0, "alpha_s must be > 0")

    @classmethod
    def reference(cls):
        # Y, Ks, Km, alpha_s, ys, a_tilde are not given for the isolator and
        # are shipped defaults, not measured values.
        xu = 0.1
        return cls(
            M=400.0, C=0.4767, Ki=1.1e6, Kn=0.5e6, K3=1.0e7,
            xu=xu, xm=0.7 * xu, xf=0.7 * xu,
            bw_alpha=0.2, bw_beta=0.7, bw_gamma=0.01, bw_n=1.0,
            Ks=2.0e6, Km=0.2e6, Y=1.0e4, alpha_s=0.1, ys=0.5, a_tilde=1.0,
            cs=10.0, ns=3.0,
        )

    @cached_property
    def f_t(self):
        """Twinning force offset, in m (``ft`` multiplies a length term)."""
        return (2.0 * self.Y - self.ys * self.Y) / (self.alpha_s * self.Ks)

    @cached_property
    def a_s(self):
        """Pinching rate in 1/m.

        Evaluated with Ks in kN/mm and Y in kN (giving 1/mm) and converted.
        """
        ks_kn_mm = self.Ks * 1e-6
        y_kn = self.Y * 1e-3
        return 1e3 * math.atan(self.a_tilde * ks_kn_mm) / (y_kn - self.ys * y_kn)

    def base_force(self, accel):
        accel = np.asarray(accel, dtype=float)
        return (-self.M * accel)[..., None]

    def forces(self, x, v, z, fs):
        """Return ``(fi, fn)`` for given kinematics and internal variables."""
        fi = self.C * v + self.bw_alpha * self.Ki * x + (1.0 - self.bw_alpha) * self.Ki * z
        fn = (-self.Kn * x + self.K3 * x * x * x) * (0.5 * (1.0 + np.sign(self.xf - np.abs(x))))
        return fi, fn

    def internal_rates(self, x, v, z, fs):
        """Return ``(dz/dt, dfs/dt)``."""
        zdot = v * (1.0 - (self.bw_gamma + self.bw_beta * np.sign(z * v)) * np.abs(z) ** self.bw_n)
        s = 0.5 * (np.tanh(self.cs * (np.abs(x) - self.xm)) + 1.0)
        beta_s = self.Ks * self.alpha_s * (
            x - fs / self.Ks
            + self.f_t * np.tanh(self.a_s * x) * (0.5 * (1.0 + np.sign(-x * v)))
        )
        dev = fs - beta_s
        fsdot = (1.0 - s) * self.Ks * (
            v - np.abs(v) * np.sign(dev) * (np.abs(dev) / self.Y) ** self.ns
        ) + s * self.Km * v
        return zdot, fsdot

    def rates(self, y, f):
        x, v, z, fs = y
        fi, fn = self.forces(x, v, z, fs)
        zdot, fsdot = self.internal_rates(x, v, z, fs)
        return (v, (f[0] - fi - fn - fs) / self.M, zdot, fsdot)


Model = Union[Duffing1Params, Duffing2Params, IsolatorParams]


def _rhs(model: Model, state, t, force):
    # rates() is plain arithmetic and accepts scalars or arrays alike
    y = tuple(state[..., i] for i in range(model.state_size))
    f = tuple(force[..., j] for j in range(model.n_dof))
    return np.stack(model.rates(y, f), axis=-1)


MODELS = {cls.name: cls for cls in (Duffing1Params, Duffing2Params, IsolatorParams)}


@dataclass(frozen=True)
class DamageScenario:
    """Uniform stiffness reduction by the fraction ``d``."""

    d: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.d < 1.0):
            raise DomainError(f"damage fraction must lie in [0, 1), got {self.d}")


def apply_damage(params: Model, d) -> Model:
    """Scale the stiffness terms of ``params`` by ``1 - d``.

    Mass and damping are untouched. ``d`` may be a float or a
    :class:`DamageScenario`.
    """
    if isinstance(d, DamageScenario):
        d = d.d
    d = float(d)
    if not (0.0 <= d < 1.0):
        raise DomainError(f"damage fraction must lie in [0, 1), got {d}")
    if d == 0.0:
        return params
    scaled = {name: getattr(params, name) * (1.0 - d) for name in params.stiffness_fields}
    return replace(params, **scaled)


def zero_state(model: Model, batch=None):
    shape = (model.state_size,) if batch is None else (batch, model.state_size)
    return np.zeros(shape)


def derivs(model: Model, state, t, forcing):
    """Time derivative of ``state`` under the applied force ``forcing`` (N).

    ``forcing`` broadcasts against ``state[..., :n_dof]``.
    """
    state = np.asarray(state, dtype=float)
    if not np.all(np.isfinite(state)):
        raise NumericError("non-finite state passed to derivs")
    force = np.broadcast_to(np.asarray(forcing, dtype=float), state.shape[:-1] + (model.n_dof,))
    return _rhs(model, state, t, force)


def step_rk4(model: Model, state, t, dt, forcing: Callable):
    """One classical RK4 step; ``forcing(t)`` returns the applied force."""
    if dt <= 0:
        raise DomainError("dt must be > 0")
    shape = np.shape(state)[:-1] + (model.n_dof,)

    def f(tt):
        return np.broadcast_to(np.asarray(forcing(tt), dtype=float), shape)

    return _rk4(model, np.asarray(state, dtype=float), t, dt, f(t), f(t + 0.5 * dt), f(t + dt))


def _rk4(model, y, t, dt, f0, fm, f1):
    h2 = 0.5 * dt
    k1 = _rhs(model, y, t, f0)
    k2 = _rhs(model, y + h2 * k1, t + h2, fm)
    k3 = _rhs(model, y + h2 * k2, t + h2, fm)
    k4 = _rhs(model, y + dt * k3, t + dt, f1)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_tuple(model: Model, y, dt, f0, fm, f1):
    """RK4 step on a tuple state with tuple forces; fast for scalar states."""
    rates = model.rates
    h2 = 0.5 * dt
    k1 = rates(y, f0)
    k2 = rates(tuple(a + h2 * b for a, b in zip(y, k1)), fm)
    k3 = rates(tuple(a + h2 * b for a, b in zip(y, k2)), fm)
    k4 = rates(tuple(a + dt * b for a, b in zip(y, k3)), f1)
    h6 = dt / 6.0
    return tuple(
        a + h6 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)
    )


def _ratio(a, b, what):
    r = a / b
    n = int(round(r))
    if n < 1 or abs(r - n) > 1e-9 * max(1.0, r):
        raise DomainError(f"{what} must be an integer multiple ({r!r} is not)")
    return n


def simulate_batch(
    model: Model,
    accel,
    dt_exc: float,
    damage=0.0,
    dt_int: float = DT_INT,
    output_rate: float = OUTPUT_RATE,
    blowup: float = 10.0,
):
    """Integrate a batch of base-acceleration records from rest.

    Parameters
    ----------
    accel : array, shape (batch, n_samples) or (n_samples,)
        Base acceleration in m/s^2 sampled every ``dt_exc``.
    dt_exc : float
        Excitation sampling interval; an integer multiple of ``dt_int``.
        Held constant over a step when equal to ``dt_int``, linearly
        interpolated otherwise.
    blowup : float
        Bound on any displacement magnitude (m).

    Returns
    -------
    ndarray, shape (batch, n_dof, n_out)
        Displacements sampled at ``t = (k + 1) / output_rate``.
    """
    accel = np.asarray(accel, dtype=float)
    squeeze = accel.ndim == 1
    accel = np.atleast_2d(accel)
    if not np.all(np.isfinite(accel)):
        raise NumericError("non-finite excitation")
    if dt_exc < dt_int * (1 - 1e-12):
        raise DomainError("excitation interval must be >= dt_int")
    sub = _ratio(dt_exc, dt_int, "excitation interval / dt_int")
    decim = _ratio(1.0 / output_rate, dt_int, "1 / (output_rate * dt_int)")
    model = apply_damage(model, damage)

    batch, n_exc = accel.shape
    duration = n_exc * dt_exc
    n_steps = n_exc * sub
    n_out = int(math.floor(duration * output_rate + 1e-9))
    forces = model.base_force(accel)  # (batch, n_exc, n_dof)
    # hold the final sample past the end of the record
    forces = np.concatenate((forces, forces[:, -1:, :]), axis=1)
    forces_t = [tuple(np.ascontiguousarray(forces[:, i, j]) for j in range(model.n_dof)) for i in range(n_exc + 1)]

    y = tuple(np.zeros(batch) for _ in range(model.state_size))
    out = np.empty((batch, model.n_dof, n_out))
    nd = model.n_dof
    k_out = 0
    for k in range(n_steps):
        i, r = divmod(k, sub)
        if sub == 1:
            f0 = fm = f1 = forces_t[i]
        else:
            fa = forces_t[i]
            fb = forces_t[i + 1]
            f0 = tuple(a + (r / sub) * (b - a) for a, b in zip(fa, fb))
            fm = tuple(a + ((r + 0.5) / sub) * (b - a) for a, b in zip(fa, fb))
            f1 = tuple(a + ((r + 1.0) / sub) * (b - a) for a, b in zip(fa, fb))
        y = rk4_tuple(model, y, dt_int, f0, fm, f1)
        if (k + 1) % decim == 0:
            disp = np.stack(y[:nd])
            if not np.all(np.abs(disp) <= blowup):
                raise InstabilityError(
                    f"response exceeded {blowup} m at t={(k + 1) * dt_int:.6g} s; "
                    f"reduce dt_int (currently {dt_int})",
                    dt_int=dt_int,
                )
            if k_out < n_out:
                out[:, :, k_out] = disp.T
                k_out += 1
    if not all(np.all(np.isfinite(c)) for c in y):
        raise InstabilityError(f"non-finite state with dt_int={dt_int}", dt_int=dt_int)
    return out[0] if squeeze else out


def simulate(
    model: Model,
    excitation,
    damage=0.0,
    dt_int: float = DT_INT,
    output_rate: float = OUTPUT_RATE,
    blowup: float = 10.0,
):
    """Simulate one base-acceleration :class:`~nldetect.excitation.TimeSeries`.

    Returns one displacement ``TimeSeries`` per degree of freedom.
    """
    from .excitation import TimeSeries

    out = simulate_batch(
        model, excitation.samples, excitation.dt, damage=damage,
        dt_int=dt_int, output_rate=output_rate, blowup=blowup,
    )
    return [TimeSeries(out[i], 1.0 / output_rate) for i in range(model.n_dof)]


def hysteresis_response(params: IsolatorParams, x, dt):
    """Drive the isolator kinematically along the displacement history ``x``.

    Velocity is taken from central differences of ``x``; internal variables
    ``z`` and ``fs`` are integrated with RK4 using linear interpolation of the
    prescribed motion. Returns a dict of arrays ``x, v, z, fs, fi, fn``.
    """
    x = np.asarray(x, dtype=float)
    v = np.gradient(x, dt)
    n = len(x)
    z = np.zeros(n)
    fs = np.zeros(n)

    def rates(xx, vv, zz, ff):
        return params.internal_rates(xx, vv, zz, ff)

    for k in range(n - 1):
        xa, xb = x[k], x[k + 1]
        va, vb = v[k], v[k + 1]
        xm, vm = 0.5 * (xa + xb), 0.5 * (va + vb)
        y = np.array([z[k], fs[k]])
        k1 = np.array(rates(xa, va, *y))
        k2 = np.array(rates(xm, vm, *(y + 0.5 * dt * k1)))
        k3 = np.array(rates(xm, vm, *(y + 0.5 * dt * k2)))
        k4 = np.array(rates(xb, vb, *(y + dt * k3)))
        z[k + 1], fs[k + 1] = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    fi, fn = params.forces(x, v, z, fs)
    return {"x": x, "v": v, "z": z, "fs": fs, "fi": fi, "fn": fn}


def param_dict(params: Model):
    return {f.name: getattr(params, f.name) for f in fields(params)}
