from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from nldetect.dynamics import (
    GRAVITY,
    DamageScenario,
    Duffing1Params,
    Duffing2Params,
    IsolatorParams,
    apply_damage,
    derivs,
    hysteresis_response,
    param_dict,
    rk4_tuple,
    simulate,
    simulate_batch,
    step_rk4,
)
from nldetect.errors import DomainError, InstabilityError
from nldetect.excitation import TimeSeries, white_noise

D1 = Duffing1Params.reference()
D2 = Duffing2Params.reference()
ISO = IsolatorParams.reference()


def test_reference_values_in_si():
    assert (D1.M, D1.C, D1.K1, D1.K3) == (412.0, 405.95, 1.0e6, 1.0e9)
    assert D2.M1 == D2.M2 == 400.0 and D2.K13 == 1.0e9
    assert ISO.Ki == 1.1e6 and ISO.Kn == 0.5e6 and ISO.xm == ISO.xf == pytest.approx(0.07)


@pytest.mark.parametrize("bad", [dict(M=0.0), dict(C=-1.0), dict(K1=0.0), dict(K3=-1.0)])
def test_duffing1_invariants(bad):
    with pytest.raises(DomainError):
        Duffing1Params(**{**param_dict(D1), **bad})


def test_isolator_invariants():
    with pytest.raises(DomainError):
        IsolatorParams(**{**param_dict(ISO), "Ks": 1.0, "Km": 2.0})
    with pytest.raises(DomainError):
        IsolatorParams(**{**param_dict(ISO), "bw_alpha": 1.0})
    with pytest.raises(DomainError):
        IsolatorParams(**{**param_dict(ISO), "ys": 2.0})


# --------------------------------------------------------------------------
# damage


def test_damage_identity():
    assert apply_damage(D1, 0.0) == D1


def test_damage_duffing1():
    d = apply_damage(D1, 0.1)
    assert d.K1 == pytest.approx(0.9e6, rel=1e-15)
    assert d.K3 == pytest.approx(0.9e9, rel=1e-15)
    assert (d.M, d.C) == (D1.M, D1.C)


def test_damage_isolator():
    d = apply_damage(ISO, DamageScenario(0.2))
    assert d.Ki == pytest.approx(0.8 * 1.1e6, rel=1e-15)
    assert d.Kn == pytest.approx(0.8 * 0.5e6, rel=1e-15)
    assert d.K3 == ISO.K3 and d.Ks == ISO.Ks


@pytest.mark.parametrize("d", [-0.1, 1.0, 1.5])
def test_damage_domain(d):
    with pytest.raises(DomainError):
        apply_damage(D1, d)
    with pytest.raises(DomainError):
        DamageScenario(d)


@given(st.floats(0.0, 0.95))
def test_damage_scales_stiffness_only(d):
    for model in (D1, D2, ISO):
        out = apply_damage(model, d)
        for name, value in param_dict(model).items():
            if name in model.stiffness_fields:
                assert getattr(out, name) == value * (1.0 - d) or d == 0.0
            else:
                assert getattr(out, name) == value  # bit-identical


# --------------------------------------------------------------------------
# equations of motion


def test_derivs_equilibrium():
    np.testing.assert_array_equal(derivs(D1, [0.0, 0.0], 0.0, 0.0), [0.0, 0.0])


def test_derivs_duffing1_substitution():
    acc = derivs(D1, [1e-3, 0.0], 0.0, 0.0)[1]
    assert acc == pytest.approx(-(1e6 * 1e-3 + 1e9 * 1e-9) / 412.0, rel=1e-14)
    assert acc == pytest.approx(-2.4296, abs=1e-4)


@given(st.floats(-0.05, 0.05))
def test_derivs_duffing2_rigid_translation(a):
    out = derivs(D2, [a, a, 0.0, 0.0], 0.0, [0.0, 0.0])
    assert out[3] == 0.0


def test_isolator_negative_stiffness_support():
    x = np.array([-0.2, -0.0701, -0.07, -0.05, 0.0, 0.05, 0.07, 0.0701, 0.2])
    _, fn = ISO.forces(x, 0 * x, 0 * x, 0 * x)
    outside = np.abs(x) > ISO.xf
    assert np.all(fn[outside] == 0.0)
    inside = np.abs(x) < ISO.xf
    np.testing.assert_allclose(fn[inside], -ISO.Kn * x[inside] + ISO.K3 * x[inside] ** 3)


@given(st.floats(-0.069, 0.069))
def test_isolator_negative_stiffness_continuous_inside(x):
    h = 1e-9
    _, f0 = ISO.forces(np.array([x]), 0, 0, 0)
    _, f1 = ISO.forces(np.array([x + h]), 0, 0, 0)
    assert abs(f1[0] - f0[0]) < 1e-6 * ISO.Kn


# --------------------------------------------------------------------------
# integration


def test_rk4_equilibrium_unchanged():
    y = step_rk4(D1, np.zeros(2), 0.0, 1e-3, lambda t: 0.0)
    np.testing.assert_array_equal(y, [0.0, 0.0])


def _linear_period_error(n):
    lin = Duffing1Params(M=1.0, C=0.0, K1=(2 * math.pi) ** 2, K3=0.0)  # period 1 s
    dt = 1.0 / n
    y = (1.0, 0.0)
    zero = (0.0,)
    for _ in range(n):
        y = rk4_tuple(lin, y, dt, zero, zero, zero)
    return abs(y[0] - 1.0) + abs(y[1])


def test_rk4_returns_after_one_period():
    assert _linear_period_error(1000) < 1e-6


def test_rk4_convergence_order():
    errors = [_linear_period_error(n) for n in (50, 100, 200)]
    orders = [math.log2(a / b) for a, b in zip(errors, errors[1:])]
    assert min(orders) >= 3.9


def test_step_rk4_matches_tuple_form():
    y0 = np.array([1e-3, -2e-2])
    a = step_rk4(D1, y0, 0.0, 1e-3, lambda t: 100.0 * math.cos(3 * t))
    f = lambda t: (100.0 * math.cos(3 * t),)  # noqa: E731
    b = rk4_tuple(D1, tuple(y0), 1e-3, f(0.0), f(5e-4), f(1e-3))
    np.testing.assert_allclose(a, b, rtol=1e-15)


def test_energy_conservation_undamped():
    model = Duffing1Params(M=412.0, C=0.0, K1=1.0e6, K3=1.0e9)
    y = (0.01, 0.0)
    e0 = model.energy(np.array(y))
    zero = (0.0,)
    for _ in range(100_000):  # 10 s at 1e-4 s
        y = rk4_tuple(model, y, 1e-4, zero, zero, zero)
    assert abs(model.energy(np.array(y)) - e0) / e0 < 1e-6


def test_simulate_zero_excitation():
    for model in (D1, D2, ISO):
        out = simulate(model, TimeSeries(np.zeros(5000), 4e-4))
        assert len(out) == model.n_dof
        for ts in out:
            assert np.all(ts.samples == 0.0)


def test_simulate_output_length():
    out = simulate(D1, white_noise(5000, 4e-4, seed=1))
    assert len(out[0].samples) == 500
    assert out[0].dt == pytest.approx(1 / 250)


def test_simulate_deterministic():
    exc = white_noise(2500, 4e-4, seed=3)
    exc = TimeSeries(exc.samples * 0.5, exc.dt)
    a = simulate_batch(D2, exc.samples, exc.dt)
    b = simulate_batch(D2, exc.samples, exc.dt)
    assert a.tobytes() == b.tobytes()


def test_simulate_batch_matches_single():
    acc = np.random.default_rng(0).standard_normal((3, 2500))
    batch = simulate_batch(D1, acc, 4e-4)
    for i in range(3):
        np.testing.assert_array_equal(batch[i], simulate_batch(D1, acc[i], 4e-4)[None][0])


def test_linear_frf_oracle():
    A = 0.003 * GRAVITY
    f = 7.8
    w = 2 * math.pi * f
    dt = 4e-4
    t = np.arange(int(20 / dt)) * dt
    out = simulate_batch(D1, A * np.cos(w * t), dt)[0]
    steady = np.abs(out[-750:]).max()  # last 3 s
    linear = A * D1.M / math.hypot(D1.K1 - D1.M * w * w, D1.C * w)
    assert steady == pytest.approx(linear, rel=0.02)


def test_instability_reported():
    with pytest.raises(InstabilityError) as err:
        simulate_batch(D1, np.full(2500, 1e6), 4e-4, blowup=1.0)
    assert err.value.dt_int == 4e-4


def test_excitation_interval_multiple_of_step():
    with pytest.raises(DomainError):
        simulate_batch(D1, np.zeros(10), 5e-4)


# --------------------------------------------------------------------------
# hysteresis


def _cycles(amp, n_cycles=3, per=2000):
    t = np.linspace(0.0, n_cycles, n_cycles * per + 1)
    return amp * np.sin(2 * math.pi * t), 1.0 / per


def test_bouc_wen_bound():
    p = IsolatorParams(**{**param_dict(ISO), "bw_beta": 50.0, "bw_gamma": 10.0})
    x, dt = _cycles(0.08)
    z = hysteresis_response(p, x, dt)["z"]
    bound = (1.0 / (p.bw_beta + p.bw_gamma)) ** (1.0 / p.bw_n)
    assert np.max(np.abs(z)) <= bound * (1 + 1e-9)
    assert np.max(np.abs(z)) > 0.9 * bound  # the bound is approached


def test_bouc_wen_loop_closed_and_dissipative():
    p = IsolatorParams(**{**param_dict(ISO), "bw_beta": 50.0, "bw_gamma": 10.0})
    per = 2000
    x, dt = _cycles(0.05, 3, per)
    r = hysteresis_response(p, x, dt)
    fi = r["fi"] - p.C * r["v"]  # rate-independent part
    for c in (1, 2):
        seg = slice(c * per, (c + 1) * per + 1)
        assert trapezoid(fi[seg], x[seg]) > 0
        assert abs(fi[seg][-1] - fi[seg][0]) < 1e-4 * np.ptp(fi)
