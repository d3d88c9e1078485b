import numpy as np
import pytest

from tensegrity._jit import NUMBA_AVAILABLE, backend
from tensegrity.compressible import MATERIALS, CompressibleBarProps, translational_mass
from tensegrity.kernels import KernelSet
from tensegrity import rigid

from conftest import random_taut_state

needs_numba = pytest.mark.skipif(not NUMBA_AVAILABLE, reason="numba not installed")


def _pair(model):
    return KernelSet(model, use_numba=False), KernelSet(model, use_numba=True)


def test_backend_name():
    assert backend() in ("numba", "numpy")


@needs_numba
@pytest.mark.parametrize("name", ["tbar", "arm", "ball"])
def test_string_and_damper_kernels_agree(name, request):
    model = request.getfixturevalue(name)
    rng = np.random.default_rng(0)
    q, qd = random_taut_state(model, rng)
    py, jit = _pair(model)
    for a, b in zip(py.string_state(q), jit.string_state(q)):
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(py.damper(q, qd), jit.damper(q, qd), rtol=1e-12, atol=1e-12)


@needs_numba
@pytest.mark.parametrize("name", ["tbar", "arm", "ball"])
def test_rigid_accel_agrees(name, request):
    model = request.getfixturevalue(name)
    rng = np.random.default_rng(1)
    q, qd = random_taut_state(model, rng)
    f = rng.standard_normal(q.size)
    py, jit = _pair(model)
    _, sigma = py.string_state(q)
    a = py.rigid_accel(q, qd, f, sigma)
    b = jit.rigid_accel(q, qd, f, sigma)
    scale = np.max(np.abs(a[0]))
    np.testing.assert_allclose(a[0], b[0], atol=1e-10 * scale)
    np.testing.assert_allclose(a[1], b[1], atol=1e-10 * np.max(np.abs(a[1])))
    assert a[2] == pytest.approx(b[2], rel=1e-9, abs=1e-12)


def test_rigid_accel_matches_reference(arm):
    rng = np.random.default_rng(4)
    q, qd = random_taut_state(arm, rng)
    ks = KernelSet(arm, use_numba=False)
    _, sigma = ks.string_state(q)
    qdd, lam, _, _ = ks.rigid_accel(q, qd, np.zeros_like(q), sigma)
    ref = rigid.eom_rhs(arm, rigid.SystemState(q, qd))
    np.testing.assert_allclose(qdd, ref.qddot, atol=1e-9 * np.max(np.abs(qdd)))


@needs_numba
def test_compressible_and_psi_kernels_agree(tbar):
    props = CompressibleBarProps.from_material(tbar, MATERIALS["aluminium"])
    rng = np.random.default_rng(2)
    q, qd = random_taut_state(tbar, rng, scale=1e-3)
    f = np.zeros_like(q)
    py, jit = _pair(tbar)
    _, sigma = py.string_state(q)
    K_b = np.full(tbar.n_bars, 1e7)
    La, psia = py.bar_psi(q, K_b, props.rest_length)
    Lb, psib = jit.bar_psi(q, K_b, props.rest_length)
    np.testing.assert_allclose(La, Lb, rtol=1e-14)
    np.testing.assert_allclose(psia, psib, rtol=1e-9, atol=1e-6)
    args = (q, qd, f, sigma, psia, translational_mass(tbar), tbar.structure.bar_masses,
            props.rest_radius, props.rest_length, props.poisson_ratio)
    for full in (True, False):
        a = py.compressible_accel(*args, full_el=full)
        b = jit.compressible_accel(*args, full_el=full)
        np.testing.assert_allclose(a[0], b[0], atol=1e-9 * np.max(np.abs(a[0])))
        np.testing.assert_allclose(a[1], b[1], atol=1e-9 * np.max(np.abs(a[1])))


def test_kernel_shape_checks(tbar):
    ks = KernelSet(tbar, use_numba=False)
    q = tbar.q0
    with pytest.raises(ValueError):
        ks.string_state(q[:-1])
    with pytest.raises(ValueError):
        ks.damper(q, np.zeros(3))
    with pytest.raises(ValueError):
        ks.rigid_accel(q, np.zeros_like(q), np.zeros_like(q), np.zeros(3))
    with pytest.raises(ValueError):
        ks.compressible_accel(q, np.zeros_like(q), np.zeros_like(q), np.zeros(4), np.zeros(5),
                              None, None, None, None, None)


def test_missing_numba_request(tbar, monkeypatch):
    import tensegrity.kernels as kernels
    monkeypatch.setattr(kernels, "NUMBA_AVAILABLE", False)
    with pytest.raises(RuntimeError):
        kernels.KernelSet(tbar, use_numba=True)
    assert kernels.KernelSet(tbar).name == "numpy"
