import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tensegrity import builtins
from tensegrity.topology import TensegrityStructure, build_structure

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture(scope="session")
def tbar():
    return build_structure(builtins.builtin_tbar())


@pytest.fixture(scope="session")
def tbar_eq():
    return build_structure(builtins.builtin_tbar_equilibrium())


@pytest.fixture(scope="session")
def arm_structure():
    return builtins.builtin_arm()


@pytest.fixture(scope="session")
def arm(arm_structure):
    return build_structure(arm_structure)


@pytest.fixture(scope="session")
def ball_structure():
    return builtins.builtin_ball()


@pytest.fixture(scope="session")
def ball(ball_structure):
    return build_structure(ball_structure)


def single_bar(mass=2.0, radius=0.1, length=1.5, fixed=(), gravity=(0.0, 0.0, 0.0)):
    st = TensegrityStructure.from_members(
        [[0.0, 0.0, 0.0], [length, 0.0, 0.0]], [(0, 1)], [],
        bar_masses=mass, bar_radii=radius, fixed_nodes=fixed, gravity=gravity)
    return build_structure(st)


def random_taut_state(model, rng, scale=1e-2):
    """Small random displacement of the free coordinates plus a random velocity."""
    q = model.q0 + scale * rng.standard_normal(model.q0.size)
    qd = rng.standard_normal(model.q0.size)
    if model.n_linear:
        held = np.any(model.A != 0, axis=0)
        q[held] = model.q0[held]
        qd[held] = 0.0
    return q, qd


def central_jacobian(fun, x0, h):
    x0 = np.asarray(x0, dtype=float)
    cols = []
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = h
        cols.append((np.asarray(fun(x0 + e)) - np.asarray(fun(x0 - e))) / (2 * h))
    return np.array(cols).T


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1][1:].rstrip(":"))):
            terminalreporter.write_line(line)
