import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tensegrity import rigid
from tensegrity.integrator import IntegratorSettings, simulate
from tensegrity.correction import CorrectionSettings
from tensegrity.rigid import (DegenerateMemberError, ForceInputs, RigidDynamics,
                              SingularConstraintError, SystemState)
from tensegrity.topology import TensegrityStructure, build_structure

from conftest import central_jacobian, random_taut_state, single_bar

G_DOWN = (0.0, 0.0, -9.806)
I3 = np.eye(3)


def point_mass_model(m=2.5, gravity=G_DOWN):
    st_ = TensegrityStructure.from_members([[0.3, -0.2, 1.0]], point_masses={0: m},
                                           gravity=gravity)
    return build_structure(st_)


def spring_model(K=100.0, rest=0.9, length=1.0, c=0.0):
    """A bar from node 0 to 1 plus a point mass at node 2 on a string to node 0."""
    st_ = TensegrityStructure.from_members(
        [[0, 0, 0], [0, 0, 1], [length, 0, 0]], [(0, 1)], [(0, 2)],
        bar_masses=1.0, bar_radii=0.01, string_stiffness=K, string_rest_lengths=[rest],
        point_masses={2: 1.0}, damping_coefficient=c)
    return build_structure(st_)


def tangent_velocity(model, q, rng):
    """Random velocity with R_q qdot = 0."""
    Rq = rigid.constraint_jacobian(model, q)
    v = rng.standard_normal(q.size)
    return v - np.linalg.pinv(Rq) @ (Rq @ v)


# mass matrix and gravity ---------------------------------------------------


def test_point_mass_matrix():
    model = point_mass_model(m=2.5)
    np.testing.assert_array_equal(rigid.mass_matrix(model), 2.5 * I3)


def test_single_bar_mass_matrix_blocks():
    m, r, l = 2.0, 0.1, 1.5
    model = single_bar(mass=m, radius=r, length=l)
    Ib = m * (3 * r**2 + l**2) / 12
    expected = m / 4 * np.block([[I3, I3], [I3, I3]]) + Ib / l**2 * np.block(
        [[I3, -I3], [-I3, I3]])
    np.testing.assert_allclose(rigid.mass_matrix(model), expected, rtol=1e-15)


def test_tbar_bar_mass(tbar):
    np.testing.assert_allclose(tbar.structure.bar_masses, 500 * np.pi * 0.05**2 * 5.0)
    np.testing.assert_allclose(tbar.structure.bar_masses, 19.635, atol=5e-4)


@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=12, max_size=12))
def test_mass_matrix_symmetric_psd(v):
    from tensegrity.builtins import builtin_tbar
    model = build_structure(builtin_tbar())
    M = rigid.mass_matrix(model)
    v = np.array(v)
    np.testing.assert_array_equal(M, M.T)
    assert v @ M @ v >= -1e-12


def test_gravity_vector():
    from tensegrity.builtins import builtin_tbar
    assert not np.any(rigid.gravity_vector(build_structure(builtin_tbar())))
    model = point_mass_model(m=2.0)
    np.testing.assert_allclose(rigid.gravity_vector(model), [0, 0, -9.806 * 2.0])
    q = model.q0.copy()
    up = q + np.array([0, 0, 0.1])
    assert rigid.gravity_potential(model, up) > rigid.gravity_potential(model, q)


# strings ---------------------------------------------------------------------


def test_force_density_values():
    model = spring_model(K=100.0, rest=0.9, length=1.0)
    assert rigid.string_force_densities(model, model.q0)[0] == pytest.approx(10.0, rel=1e-14)
    model = spring_model(K=100.0, rest=1.0, length=1.0)
    assert rigid.string_force_densities(model, model.q0)[0] == 0.0
    model = spring_model(K=100.0, rest=2.0, length=1.0)
    assert rigid.string_force_densities(model, model.q0)[0] == 0.0


def test_string_potential_values():
    assert rigid.string_potential(spring_model(rest=1.0), spring_model(rest=1.0).q0) == 0.0
    model = spring_model(K=100.0, rest=0.9)
    assert rigid.string_potential(model, model.q0) == pytest.approx(0.5, rel=1e-12)
    slack = spring_model(K=100.0, rest=1.5)
    assert rigid.string_potential(slack, slack.q0) == 0.0


def test_string_gradient_single_and_slack():
    model = spring_model(K=100.0, rest=0.9)
    q = model.q0
    Y = model.selectors.Y[0]
    np.testing.assert_allclose(rigid.string_potential_gradient(model, q),
                               10.0 * q @ Y.T @ Y, rtol=1e-14)
    slack = spring_model(rest=1.5)
    assert not np.any(rigid.string_potential_gradient(slack, slack.q0))


def test_string_gradient_matches_fd(ball):
    rng = np.random.default_rng(3)
    q, _ = random_taut_state(ball, rng, scale=1e-3)
    h = 1e-6 * max(1.0, np.linalg.norm(q))
    num = central_jacobian(lambda x: [rigid.string_potential(ball, x)], q, h)[0]
    ana = rigid.string_potential_gradient(ball, q)
    assert np.max(np.abs(num - ana)) <= 1e-6 * np.max(np.abs(ana))


def test_degenerate_string_raises():
    model = spring_model()
    q = model.q0.copy()
    q[6:9] = q[0:3]
    with pytest.raises(DegenerateMemberError):
        rigid.string_force_densities(model, q)


# dampers -----------------------------------------------------------------------


def test_damper_axial_stretch():
    c, v = 3.0, 0.7
    model = spring_model(rest=0.9, c=c)
    qd = np.zeros(9)
    qd[6] = v  # node 2 moves away from node 0 along the string
    f = rigid.damper_forces(model, model.q0, qd)
    np.testing.assert_allclose(f[6:9], [-c * v, 0, 0], rtol=1e-14)
    np.testing.assert_allclose(f[0:3], [c * v, 0, 0], rtol=1e-14)
    assert not np.any(rigid.damper_forces(model, model.q0, np.zeros(9)))


def test_damper_slack_string_is_silent():
    model = spring_model(rest=1.5, c=3.0)
    qd = np.ones(9)
    assert not np.any(rigid.damper_forces(model, model.q0, qd))


@given(st.integers(0, 2**32 - 1))
def test_damper_dissipates(seed):
    from tensegrity.builtins import builtin_tbar
    model = build_structure(builtin_tbar(damping=2.0))
    rng = np.random.default_rng(seed)
    q, qd = random_taut_state(model, rng, scale=1e-2)
    f = rigid.damper_forces(model, q, qd)
    assert f @ qd <= 1e-12
    S = np.array([Y @ q for Y in model.selectors.Y])
    for Y, s in zip(model.selectors.Y, S):
        fk = -model.damping * ((Y @ qd) @ s) * s / (s @ s)
        assert np.linalg.norm(np.cross(fk, s)) <= 1e-12 * (1 + np.linalg.norm(fk))


# constraints -----------------------------------------------------------------------


def test_constraints_at_rest_and_stretched(tbar):
    assert not np.any(rigid.constraints(tbar, tbar.q0))
    q = tbar.q0.copy()
    d = 0.01
    # bar 0 runs from node 0 to node 3 along (3, 0, 4)/5
    q[9:12] += d * np.array([3, 0, 4]) / 5.0
    R = rigid.constraints(tbar, q)
    assert R[6] == pytest.approx(2 * 5.0 * d + d**2, rel=1e-12)
    q = tbar.q0.copy()
    q[0] += 1e-3
    assert rigid.constraints(tbar, q)[0] == pytest.approx(1e-3)


def test_constraint_jacobian_fd_and_identities(arm):
    rng = np.random.default_rng(5)
    q, qd = random_taut_state(arm, rng, scale=1e-2)
    h = 1e-6 * max(1.0, np.linalg.norm(q))
    num = central_jacobian(lambda x: rigid.constraints(arm, x), q, h)
    ana = rigid.constraint_jacobian(arm, q)
    assert np.max(np.abs(num - ana)) <= 1e-6 * np.max(np.abs(ana))
    B = rigid.bar_vectors(arm, q)
    Bd = rigid.bar_vectors(arm, qd)
    np.testing.assert_allclose((ana @ qd)[arm.n_linear:], 2 * np.einsum("ka,ka->k", B, Bd),
                               rtol=1e-10, atol=1e-12)
    zero = rigid.constraint_jacobian(arm, np.zeros_like(q))
    assert not np.any(zero[arm.n_linear:])


def test_constraint_accel_rhs_examples():
    model = single_bar(length=1.0)
    assert not np.any(rigid.constraint_accel_rhs(model, np.zeros(6)))
    qd = np.array([-1.0, 0, 0, 1.0, 0, 0])
    assert rigid.constraint_accel_rhs(model, qd)[-1] == pytest.approx(8.0)
    # rotation about z at rate w: bdot = w z x b, |bdot| = w l
    w = 0.3
    qd = np.array([0, -w * 0.5, 0, 0, w * 0.5, 0])
    assert rigid.constraint_accel_rhs(model, qd)[-1] == pytest.approx(2 * w**2)


# equations of motion ---------------------------------------------------------------


def test_free_bar_at_rest():
    model = single_bar()
    res = rigid.eom_rhs(model, SystemState.at_rest(model))
    assert not np.any(res.qddot)
    assert not np.any(res.lam)


def test_free_bar_in_gravity():
    model = single_bar(gravity=G_DOWN)
    res = rigid.eom_rhs(model, SystemState.at_rest(model))
    np.testing.assert_allclose(res.qddot, np.tile(G_DOWN, 2), atol=1e-13)
    assert abs(res.lam[-1]) <= 1e-12


def test_pendulum_release_acceleration():
    m, r, l, g = 2.0, 0.02, 1.2, 9.806
    model = single_bar(mass=m, radius=r, length=l, fixed=(0,), gravity=G_DOWN)
    res = rigid.eom_rhs(model, SystemState.at_rest(model))
    I_pivot = m * (3 * r**2 + l**2) / 12 + m * (l / 2) ** 2
    alpha = m * g * l / 2 / I_pivot
    np.testing.assert_allclose(res.qddot[3:], [0, 0, -alpha * l], rtol=1e-12, atol=1e-12)


def test_redundant_constraints_named():
    model = single_bar(fixed=(0, 1))
    with pytest.raises(SingularConstraintError) as err:
        rigid.eom_rhs(model, SystemState.at_rest(model))
    assert err.value.rows
    assert "redundant" in str(err.value)


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        ForceInputs(sigma=[1.0, -0.1])


def test_state_validation():
    with pytest.raises(ValueError):
        SystemState(np.zeros(6), np.zeros(3))
    with pytest.raises(ValueError):
        SystemState(np.full(3, np.nan), np.zeros(3))


@given(st.integers(0, 2**32 - 1))
def test_acceleration_level_constraints(seed):
    from tensegrity.builtins import builtin_tbar
    model = build_structure(builtin_tbar(damping=1.0))
    rng = np.random.default_rng(seed)
    q, qd = random_taut_state(model, rng, scale=1e-2)
    res = RigidDynamics(model).evaluate(0.0, q, qd)
    Rq = rigid.constraint_jacobian(model, q)
    xi2 = rigid.constraint_accel_rhs(model, qd)
    assert np.max(np.abs(Rq @ res.qddot + xi2)) <= 1e-10


def test_multiplier_sign_convention(tbar):
    rng = np.random.default_rng(2)
    q, qd = random_taut_state(tbar, rng)
    dyn = RigidDynamics(tbar)
    res = dyn.evaluate(0.0, q, qd)
    sigma = dyn.sigma(q)
    xi1 = -np.einsum("k,kij,j->i", sigma, tbar.selectors.YtY, q) + tbar.G
    Rq = rigid.constraint_jacobian(tbar, q)
    np.testing.assert_allclose(tbar.M @ res.qddot - Rq.T @ res.lam, xi1, atol=1e-10)


# energy ------------------------------------------------------------------------------


def test_energy_examples(tbar):
    slack = spring_model(rest=1.5)
    assert rigid.total_energy(slack, SystemState.at_rest(slack)) == 0.0
    # two vertical springs, K = 100, stretch 0.4 m each
    assert rigid.total_energy(tbar, SystemState.at_rest(tbar)) == pytest.approx(16.0, rel=1e-12)


def test_kinetic_energy_per_bar(tbar):
    rng = np.random.default_rng(7)
    q = tbar.q0
    qd = tangent_velocity(tbar, q, rng)
    expected = 0.0
    for k, (i, j) in enumerate(tbar.bar_nodes):
        m = tbar.structure.bar_masses[k]
        vi, vj = qd[3 * i:3 * i + 3], qd[3 * j:3 * j + 3]
        b = q[3 * j:3 * j + 3] - q[3 * i:3 * i + 3]
        w = np.cross(b, vj - vi) / (b @ b)
        expected += 0.5 * m * np.sum((0.5 * (vi + vj)) ** 2)
        expected += 0.5 * tbar.bar_inertia[k] * (w @ w)
    assert rigid.kinetic_energy(tbar, qd) == pytest.approx(expected, rel=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_no_spin(seed):
    from tensegrity.builtins import builtin_tbar
    model = build_structure(builtin_tbar())
    rng = np.random.default_rng(seed)
    q, qd = random_taut_state(model, rng)
    w = rigid.bar_angular_velocities(model, q, qd)
    B = rigid.bar_vectors(model, q)
    assert np.max(np.abs(np.einsum("ka,ka->k", w, B))) <= 1e-12


@given(st.integers(0, 2**32 - 1))
def test_energy_rate_vanishes_on_vector_field(seed):
    from tensegrity.builtins import builtin_tbar
    model = build_structure(builtin_tbar())
    rng = np.random.default_rng(seed)
    q = model.q0
    qd = tangent_velocity(model, q, rng)
    dyn = RigidDynamics(model)
    res = dyn.evaluate(0.0, q, qd)
    dEdq, dEdqd = dyn.energy_gradients(q, qd)
    rate = dEdq @ qd + dEdqd @ res.qddot
    scale = np.abs(dEdq) @ np.abs(qd) + np.abs(dEdqd) @ np.abs(res.qddot)
    assert abs(rate) <= 1e-10 * max(scale, 1.0)


def test_conservative_energy_short_run(tbar):
    off = CorrectionSettings(energy_correction_enabled=False, geometric_correction_enabled=False)
    tr = simulate(tbar, SystemState.at_rest(tbar),
                  settings=IntegratorSettings(rel_tol=1e-12, abs_tol=1e-12, correction=off),
                  t_end=0.5)
    assert np.max(np.abs(tr.energy_residual)) <= 1e-9


def test_energy_gradients_match_fd(ball):
    rng = np.random.default_rng(11)
    q, qd = random_taut_state(ball, rng, scale=1e-3)
    dyn = RigidDynamics(ball)
    dEdq, dEdqd = dyn.energy_gradients(q, qd)
    h = 1e-6 * max(1.0, np.linalg.norm(q))
    num_q = central_jacobian(lambda x: [dyn.energy(x, qd)], q, h)[0]
    num_v = central_jacobian(lambda x: [dyn.energy(q, x)], qd, 1e-6)[0]
    assert np.max(np.abs(num_q - dEdq)) <= 1e-5 * np.max(np.abs(dEdq))
    assert np.max(np.abs(num_v - dEdqd)) <= 1e-5 * np.max(np.abs(dEdqd))
