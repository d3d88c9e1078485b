import numpy as np
import pytest

from tensegrity import builtins
from tensegrity.correction import CorrectionSettings
from tensegrity.integrator import (DormandPrince, IntegratorSettings, SimulationError,
                                   derivative, dp54_attempt, simulate, step)
from tensegrity.rigid import ForceInputs, RigidDynamics, SystemState
from tensegrity.topology import build_structure

from conftest import single_bar

OFF = CorrectionSettings(energy_correction_enabled=False, geometric_correction_enabled=False)


def adaptive(fun, y0, t_end, **kw):
    settings = IntegratorSettings(**kw)
    dp = DormandPrince(fun, settings)
    t, y = 0.0, np.atleast_1d(np.asarray(y0, dtype=float))
    k = fun(t, y)
    h = dp.initial_step(t, y, k, t_end)
    n = 0
    while t < t_end:
        t, y, k, _, h, _, _ = dp.step(t, y, min(h, t_end - t), k)
        n += 1
    return y, n, h


def fixed(fun, y0, t_end, n):
    h = t_end / n
    t, y = 0.0, np.atleast_1d(np.asarray(y0, dtype=float))
    k = fun(t, y)
    for _ in range(n):
        y, _, k = dp54_attempt(fun, t, y, h, k)
        t += h
    return y


def test_linear_decay_to_tolerance():
    y, _, _ = adaptive(lambda t, y: -2.0 * y, 1.0, 1.0, rel_tol=1e-10, abs_tol=1e-12)
    assert y[0] == pytest.approx(np.exp(-2.0), rel=1e-9)


def test_quintic_polynomial_exact():
    # y' = t^4 has a degree 5 solution that a fifth-order method reproduces
    y = fixed(lambda t, y: np.array([t**4]), 0.0, 1.0, 4)
    assert y[0] == pytest.approx(0.2, rel=1e-14)


def test_zero_field_grows_step():
    _, n, h = adaptive(lambda t, y: np.zeros_like(y), [1.0, 2.0], 10.0, rel_tol=1e-10,
                       abs_tol=1e-10)
    assert n < 20


def test_order_observed():
    fun = lambda t, y: -y**2
    errs = [abs(fixed(fun, 1.0, 1.0, n)[0] - 0.5) for n in (8, 16, 32)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 4.8)


def test_t_end_equals_start(tbar):
    tr = simulate(tbar, SystemState.at_rest(tbar), t_end=0.0)
    assert len(tr) == 1
    with pytest.raises(ValueError):
        simulate(tbar, SystemState.at_rest(tbar, t=1.0), t_end=0.5)


def test_deterministic(tbar):
    a = simulate(tbar, SystemState.at_rest(tbar), t_end=0.3)
    b = simulate(tbar, SystemState.at_rest(tbar), t_end=0.3)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.t, b.t)


def test_trajectory_invariants(arm_structure):
    model = build_structure(arm_structure)
    dyn = RigidDynamics(model, ForceInputs(f_ext=builtins.builtin_forcing("arm", arm_structure)))
    tr = simulate(dyn, SystemState.at_rest(model), t_end=0.2)
    assert np.all(np.diff(tr.t) > 0)
    assert tr.t[-1] == 0.2
    assert np.max(tr.constraint_norm) <= 1e-10
    assert np.max(np.abs(tr.energy_residual)) <= 1e-10
    assert tr.W_f[-1] != 0.0
    assert tr.q.shape == (len(tr), model.q0.size)
    assert tr.node(0).shape == (len(tr), 3)
    np.testing.assert_array_equal(tr.state(-1).q, tr.q[-1])


def test_correction_keeps_bars_rigid(tbar):
    loose = IntegratorSettings(rel_tol=1e-5, abs_tol=1e-5)
    on = simulate(tbar, SystemState.at_rest(tbar), settings=loose, t_end=2.0)
    off = simulate(tbar, SystemState.at_rest(tbar), settings=loose.replace(correction=OFF),
                   t_end=2.0)
    assert np.max(on.constraint_norm) <= 1e-10
    assert np.max(off.constraint_norm) > 100 * np.max(on.constraint_norm)


def test_t_eval_lands_exactly(tbar):
    times = np.linspace(0, 0.5, 11)
    tr = simulate(tbar, SystemState.at_rest(tbar), t_end=0.5, t_eval=times)
    np.testing.assert_array_equal(tr.t[tr.eval_index], times)
    with pytest.raises(ValueError):
        simulate(tbar, SystemState.at_rest(tbar), t_end=0.5, t_eval=[0.7])


def test_trapezoidal_matches_dp54():
    model = single_bar(mass=1.0, radius=1e-3, length=1.0, fixed=(0,), gravity=(0, 0, -9.806))
    q = model.q0.copy()
    q[3:] = [np.cos(0.1), 0.0, -np.sin(0.1)]
    s0 = SystemState(q, np.zeros(6))
    ref = simulate(model, s0, t_end=0.2)
    tr = simulate(model, s0, settings=IntegratorSettings(method="trapezoidal", h_fixed=1e-3),
                  t_end=0.2)
    assert tr.t[-1] == pytest.approx(0.2)
    assert np.max(np.abs(tr.q[-1] - ref.q[-1])) <= 1e-4
    assert np.max(tr.constraint_norm) <= 1e-10


def test_step_and_derivative(tbar):
    s0 = SystemState.at_rest(tbar)
    d = derivative(tbar, s0)
    assert d.shape == (2 * 12 + 1,)
    np.testing.assert_array_equal(d[:12], 0.0)
    s1, h_next, err = step(tbar, s0)
    assert s1.t > 0 and h_next > 0 and err <= 1.0


def test_simulation_error_carries_state(tbar):
    settings = IntegratorSettings(correction=CorrectionSettings(gamma=1e-30))
    with pytest.raises(SimulationError) as err:
        simulate(tbar, SystemState.at_rest(tbar), settings=settings, t_end=0.1)
    assert err.value.last_state is not None
    with pytest.raises(SimulationError):
        simulate(tbar, SystemState.at_rest(tbar), settings=IntegratorSettings(max_steps=3),
                 t_end=1.0)


def test_settings_validation():
    with pytest.raises(ValueError):
        IntegratorSettings(method="euler")
    with pytest.raises(ValueError):
        IntegratorSettings(rel_tol=-1.0)


def test_callback_sees_every_step(tbar):
    seen = []
    tr = simulate(tbar, SystemState.at_rest(tbar), t_end=0.1,
                  callback=lambda t, y, rep: seen.append(t))
    np.testing.assert_array_equal(seen, tr.t[1:])
