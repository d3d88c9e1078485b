"""Axially elastic bars.

Bar length constraints are dropped; each bar becomes a stiff axial spring
with force density ``Psi_k = K_b (1 - l0/l)`` and its transverse radius
follows the Poisson rule, integrated in closed form as
``r(l) = r0 (l0/l)**nu``.  The rotational kinetic energy of a bar is
``1/2 (I/l^2)(|bdot|^2 - ldot^2)`` with ``I = m (3 r^2 + l^2)/12``.

The equations of motion are

    M_qdd(q) q'' - A^T lambda = xi3,      A q'' = 0,

where ``xi3`` collects the velocity terms of d/dt(dT/dqdot), the member
forces, gravity and the external and damper forces.  By default it also
contains the configuration gradient of the kinetic energy, dT/dq, which
the full Euler-Lagrange equations require for energy to be conserved; set
``full_euler_lagrange=False`` to leave it out.

A bar with neither end held by a boundary row has a massless axial mode
(M_qdd is singular along it), so such structures are rejected at
construction unless the saddle matrix happens to be regular.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .linearization import (LinearizationMismatch, LinearModel, OperatingPoint, _central,
                            damper_jacobians, rel_error, x_hat, y_hat)
from .rigid import (DegenerateMemberError, ForceInputs, SystemState, bar_vectors,
                    gravity_potential, string_force_densities, string_potential,
                    string_potential_gradient)
from .topology import AssembledModel

SADDLE_RCOND = 1e-13


@dataclass(frozen=True)
class Material:
    name: str
    density: float
    youngs_modulus: float
    poisson_ratio: float


MATERIALS = {
    "hdpe": Material("hdpe", 960.0, 1.0e9, 0.46),
    "aluminium": Material("aluminium", 2700.0, 68.0e9, 0.33),
}
MATERIALS["aluminum"] = MATERIALS["aluminium"]


class NotAtEquilibriumError(ValueError):
    pass


@dataclass
class CompressibleBarProps:
    """Per-bar axial properties, all arrays of length n_b."""

    K_b: np.ndarray
    rest_length: np.ndarray
    rest_radius: np.ndarray
    poisson_ratio: np.ndarray
    youngs_modulus: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        nu = self.poisson_ratio
        if np.any(nu < 0.0) or np.any(nu >= 0.5):
            raise ValueError("Poisson ratio must lie in [0, 0.5)")
        if np.any(self.K_b <= 0) or np.any(self.rest_length <= 0) or np.any(self.rest_radius <= 0):
            raise ValueError("bar stiffness, rest length and radius must be positive")

    @classmethod
    def from_material(cls, model: AssembledModel, material, rest_length=None, K_b=None):
        """Props from a preset name or :class:`Material`; ``K_b = E pi r^2 / l0``."""
        if isinstance(material, str):
            material = MATERIALS[material.lower()]
        nb = model.n_bars
        l0 = model.bar_lengths.copy() if rest_length is None else np.broadcast_to(
            np.asarray(rest_length, dtype=float), (nb,)).copy()
        r0 = model.structure.bar_radii.copy()
        E = np.full(nb, material.youngs_modulus)
        if K_b is None:
            K_b = E * np.pi * r0**2 / l0
        return cls(np.broadcast_to(np.asarray(K_b, dtype=float), (nb,)).copy(), l0, r0,
                   np.full(nb, material.poisson_ratio), E, np.full(nb, material.density))

    def replace(self, **changes):
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return CompressibleBarProps(**fields)


@dataclass
class CompressibleEomTerms:
    M_qdd: np.ndarray
    M_qd: np.ndarray
    M_q: np.ndarray
    Psi: np.ndarray
    T_f: float


def translational_mass(model: AssembledModel):
    """Constant part sum m Xbar^T Xbar + sum m_p P^T P of the mass matrix."""
    sel = model.selectors
    st = model.structure
    M = np.zeros((3 * model.n, 3 * model.n))
    for k in range(model.n_bars):
        M += st.bar_masses[k] * sel.Xbar[k].T @ sel.Xbar[k]
    for k in range(st.n_point_masses):
        M += st.point_masses[k] * sel.P[k].T @ sel.P[k]
    return M


def bar_length_rate(model: AssembledModel, q, qdot, k):
    """ldot_k = b_k . bdot_k / l_k."""
    b = bar_vectors(model, q)[k]
    bd = bar_vectors(model, qdot)[k]
    L = np.linalg.norm(b)
    if L == 0.0:
        raise DegenerateMemberError(f"bar {k} has zero length")
    return float(b @ bd / L)


class _BarKinematics:
    """Per-bar scalars shared by the energy, gradient and matrix forms."""

    def __init__(self, dyn, q, qdot):
        model = dyn.model
        props = dyn.props
        self.B = bar_vectors(model, q)
        self.Bd = bar_vectors(model, qdot)
        ll = np.einsum("ka,ka->k", self.B, self.B)
        if np.any(ll == 0.0):
            raise DegenerateMemberError("a bar has collapsed to zero length")
        L = np.sqrt(ll)
        m = model.structure.bar_masses
        nu = props.poisson_ratio
        self.L = L
        self.Ld = np.einsum("ka,ka->k", self.B, self.Bd) / L
        self.vv = np.einsum("ka,ka->k", self.Bd, self.Bd)
        self.r = props.rest_radius * (props.rest_length / L) ** nu
        self.rdot = -nu * self.r * self.Ld / L
        self.I = m / 12.0 * (3.0 * self.r**2 + ll)
        self.dI_dl = m / 12.0 * (-6.0 * nu * self.r**2 / L + 2.0 * L)
        self.Idot = m / 12.0 * (6.0 * self.r * self.rdot + 2.0 * L * self.Ld)
        self.a = self.I / ll
        self.da = self.dI_dl / ll - 2.0 * self.I / (ll * L)


class CompressibleDynamics:
    """Dynamics of a structure whose bars stretch axially.

    Holonomic constraints are only the linear boundary rows ``A q = b``.
    Bar masses come from the structure; ``props`` supplies the axial
    stiffness, rest length, rest radius and Poisson ratio.
    """

    compressible = True

    def __init__(self, model: AssembledModel, props: CompressibleBarProps,
                 inputs: ForceInputs | None = None, full_euler_lagrange=True,
                 psi_override=None, kernels=None, check=True):
        self.model = model
        self.props = props
        self.inputs = inputs or ForceInputs()
        self.kernels = kernels or model.kernels
        self.full_euler_lagrange = bool(full_euler_lagrange)
        self.psi_override = None if psi_override is None else np.asarray(psi_override, float)
        self.n3 = 3 * model.n
        nb = model.n_bars
        for name in ("K_b", "rest_length", "rest_radius", "poisson_ratio"):
            if getattr(props, name).shape != (nb,):
                raise ValueError(f"{name} needs {nb} entries")
        self.M_const = np.ascontiguousarray(translational_mass(model))
        self._mass = np.ascontiguousarray(model.structure.bar_masses)
        self._K_b = np.ascontiguousarray(props.K_b, dtype=float)
        self._l0 = np.ascontiguousarray(props.rest_length, dtype=float)
        if check:
            rc = self.saddle_rcond(model.q0)
            if rc < SADDLE_RCOND:
                raise ValueError(
                    f"saddle matrix is singular at q0 (rcond {rc:.2e}); every bar needs "
                    "an end held by a boundary row, otherwise its axial mode has no mass")

    # ------------------------------------------------------------------

    @property
    def default_step(self):
        """Trapezoidal step: 1e-4 s, shrunk so h * omega_axial stays below 0.5."""
        M = self.mass_matrix_qdd(self.model.q0)
        K = self.structural_stiffness(self.model.q0)
        nl = self.model.n_linear
        T = scipy.linalg.null_space(self.model.A) if nl else np.eye(self.n3)
        w2 = scipy.linalg.eigh(T.T @ K @ T, T.T @ M @ T, eigvals_only=True)
        omega = float(np.sqrt(max(w2.max(), 0.0)))
        return min(1e-4, 0.5 / omega) if omega > 0 else 1e-4

    def sigma(self, q):
        if self.inputs.sigma is not None:
            return self.inputs.sigma
        L, sigma = self.kernels.string_state(q)
        if not L.all():
            raise DegenerateMemberError("a string has zero length")
        return sigma

    def psi(self, q):
        if self.psi_override is not None:
            return self.psi_override
        L, psi = self.kernels.bar_psi(np.ascontiguousarray(q, dtype=float), self._K_b,
                                      self._l0)
        if not L.all():
            raise DegenerateMemberError("a bar has collapsed to zero length")
        return psi

    def evaluate(self, t, q, qdot, sigma=None, psi=None, f_ext=None):
        """Return ``(qddot, lambda, power)``."""
        q = np.ascontiguousarray(q, dtype=float)
        qdot = np.ascontiguousarray(qdot, dtype=float)
        if sigma is None:
            sigma = self.sigma(q)
        if psi is None:
            psi = self.psi(q)
        if f_ext is None:
            f_ext = self.inputs.force(t, q, qdot)
        p = self.props
        qdd, lam, power = self.kernels.compressible_accel(
            q, qdot, np.ascontiguousarray(f_ext, dtype=float),
            np.ascontiguousarray(sigma, dtype=float), np.ascontiguousarray(psi, dtype=float),
            self.M_const, self._mass, p.rest_radius, p.rest_length, p.poisson_ratio,
            self.full_euler_lagrange)
        if not np.all(np.isfinite(qdd)):
            raise FloatingPointError("compressible saddle solve produced non-finite values")
        return qdd, lam, float(power)

    def rhs(self, t, y):
        n3 = self.n3
        q, qd = y[:n3], y[n3:2 * n3]
        qdd, _, power = self.evaluate(t, q, qd)
        out = np.empty_like(y)
        out[:n3] = qd
        out[n3:2 * n3] = qdd
        out[-1] = power
        return out

    # matrices ---------------------------------------------------------

    def mass_matrix(self, q):
        """M(q) = M_const + sum (I/l^2) X^T X."""
        kin = _BarKinematics(self, q, np.zeros_like(q))
        return self.M_const + np.einsum("k,kij->ij", kin.a, self.model.selectors.XtX)

    def mass_matrix_qdd(self, q):
        return self.kinetic_terms(q, np.zeros_like(q)).M_qdd

    def kinetic_terms(self, q, qdot) -> CompressibleEomTerms:
        kin = _BarKinematics(self, q, qdot)
        XtX = self.model.selectors.XtX
        L, Ld, I, Idot = kin.L, kin.Ld, kin.I, kin.Idot
        w = np.einsum("kij,j->ki", XtX, q)
        M = self.M_const + np.einsum("k,kij->ij", kin.a, XtX)
        M_qdd = M - np.einsum("k,ki,kj->ij", I / L**4, w, w)
        Mdot = np.einsum("k,kij->ij", Idot / L**2 - 2.0 * I * Ld / L**3, XtX)
        M_f = np.einsum("k,kij->ij", I * Ld / L**3, XtX)
        coef = Idot * Ld / L**3 - 3.0 * I * Ld**2 / L**4 + (kin.vv / L - Ld**2 / L) * I / L**3
        M_q = -np.einsum("k,kij->ij", coef, XtX)
        T_f = 0.5 * float(np.sum(I / L**2 * Ld**2))
        return CompressibleEomTerms(M_qdd, Mdot - M_f, M_q, self.psi(q), T_f)

    def momentum(self, q, qdot):
        """dT/dqdot = M(q) qdot - sum (I ldot / l^3) X^T X q."""
        kin = _BarKinematics(self, q, qdot)
        XtX = self.model.selectors.XtX
        w = np.einsum("kij,j->ki", XtX, q)
        return self.mass_matrix(q) @ qdot - np.einsum("k,ki->i", kin.I * kin.Ld / kin.L**3, w)

    def kinetic_gradient_q(self, q, qdot):
        """dT/dq (configuration gradient of the kinetic energy)."""
        kin = _BarKinematics(self, q, qdot)
        XtX = self.model.selectors.XtX
        w = np.einsum("kij,j->ki", XtX, q)
        u = np.einsum("kij,j->ki", XtX, qdot)
        L, Ld = kin.L, kin.Ld
        cw = 0.5 * kin.da * (kin.vv - Ld**2) / L + kin.a * Ld**2 / L**2
        cu = -kin.a * Ld / L
        return np.einsum("k,ki->i", cw, w) + np.einsum("k,ki->i", cu, u)

    # energy -----------------------------------------------------------

    def kinetic_energy(self, q, qdot):
        kin = _BarKinematics(self, q, qdot)
        return 0.5 * float(qdot @ self.M_const @ qdot) + 0.5 * float(
            np.sum(kin.a * (kin.vv - kin.Ld**2)))

    def bar_potential(self, q):
        L = np.linalg.norm(bar_vectors(self.model, q), axis=1)
        return 0.5 * float(np.sum(self.props.K_b * (L - self.props.rest_length) ** 2))

    def bar_potential_gradient(self, q, psi=None):
        """sum_k Psi_k q^T X_k^T X_k."""
        psi = self.psi(q) if psi is None else psi
        return np.einsum("k,kij,j->i", psi, self.model.selectors.XtX, q)

    def energy(self, q, qdot):
        return (self.kinetic_energy(q, qdot) + string_potential(self.model, q)
                + gravity_potential(self.model, q) + self.bar_potential(q))

    def energy_gradients(self, q, qdot):
        sigma = string_force_densities(self.model, q)
        dq = (self.kinetic_gradient_q(q, qdot) + string_potential_gradient(self.model, q, sigma)
              - self.model.G + self.bar_potential_gradient(q))
        return dq, self.momentum(q, qdot)

    # constraints (boundary rows only) -----------------------------------

    def constraints(self, q):
        return self.model.A @ q - self.model.b

    def constraint_jacobian(self, q):
        return self.model.A.copy()

    def q_rate_matrix(self, q, qdot):
        return np.zeros_like(self.model.A)

    def bar_length_residuals(self, q):
        B = bar_vectors(self.model, q)
        return np.einsum("ka,ka->k", B, B) - self.props.rest_length**2

    # stiffness and saddle -------------------------------------------------

    def saddle_matrix(self, q):
        A = self.model.A
        nl = A.shape[0]
        return np.block([[self.mass_matrix_qdd(q), -A.T], [-A, np.zeros((nl, nl))]])

    def saddle_rcond(self, q):
        s = np.linalg.svd(self.saddle_matrix(q), compute_uv=False)
        return float(s[-1] / s[0])

    def structural_stiffness(self, q, sigma=None, psi=None):
        return structural_stiffness(self, q, sigma, psi)


# --------------------------------------------------------------------------
# module-level API


def compressible_kinetic_terms(dyn: CompressibleDynamics, q, qdot):
    return dyn.kinetic_terms(q, qdot)


def bar_potential(dyn: CompressibleDynamics, q):
    return dyn.bar_potential(q)


def bar_potential_gradient(dyn: CompressibleDynamics, q):
    return dyn.bar_potential_gradient(q)


def compressible_eom_rhs(dyn: CompressibleDynamics, state: SystemState, inputs=None):
    """(qddot, lambda) of the axially elastic model."""
    sigma = f = None
    if inputs is not None:
        sigma = inputs.sigma
        f = inputs.force(state.t, state.q, state.qdot)
    qdd, lam, _ = dyn.evaluate(state.t, state.q, state.qdot, sigma=sigma, f_ext=f)
    return qdd, lam


def structural_stiffness(dyn: CompressibleDynamics, q_eq, sigma=None, psi=None):
    """K_sys = sum sigma Y^T Y + (K l0 / |s|^3) Y^T Y q q^T Y^T Y, plus bar terms.

    ``sigma`` and ``psi`` default to the passive values at ``q_eq``; the
    rank-one curvature terms always use the member stiffnesses and rest
    lengths.  Slack strings contribute nothing.
    """
    model = dyn.model
    q = np.asarray(q_eq, dtype=float)
    if sigma is None:
        sigma = string_force_densities(model, q)
    if psi is None:
        psi = dyn.psi(q)
    sel = model.selectors
    K = np.zeros((q.size, q.size))
    for k in range(model.n_strings):
        w = sel.YtY[k] @ q
        L = np.linalg.norm(sel.Y[k] @ q)
        if L == 0.0:
            raise DegenerateMemberError(f"string {k} has zero length")
        ls = model.string_rest_lengths[k]
        if L >= ls:
            K += sigma[k] * sel.YtY[k] + model.string_stiffness[k] * ls / L**3 * np.outer(w, w)
    for k in range(model.n_bars):
        w = sel.XtX[k] @ q
        L = np.linalg.norm(sel.X[k] @ q)
        if L == 0.0:
            raise DegenerateMemberError(f"bar {k} has zero length")
        K += psi[k] * sel.XtX[k] + dyn.props.K_b[k] * dyn.props.rest_length[k] / L**3 * np.outer(w, w)
    return 0.5 * (K + K.T)


def equilibrium_rest_lengths(dyn: CompressibleDynamics, q=None, sigma=None, f0=None):
    """Bar rest lengths that make ``q`` a static equilibrium.

    The rigid multipliers at ``q`` give the bar force densities
    Psi_k = -2 lambda_k; the rest lengths then follow from
    Psi = K_b (1 - l0/l).
    """
    from .rigid import RigidDynamics

    model = dyn.model
    q = model.q0 if q is None else q
    rig = RigidDynamics(model)
    if sigma is None:
        sigma = string_force_densities(model, q)
    f0 = np.zeros_like(q) if f0 is None else f0
    res = rig.evaluate(0.0, q, np.zeros_like(q), sigma=sigma, f_ext=f0)
    psi = -2.0 * res.lam[model.n_linear:]
    L = np.linalg.norm(bar_vectors(model, q), axis=1)
    return L * (1.0 - psi / dyn.props.K_b)


def _xi3_blocks(dyn: CompressibleDynamics, op: OperatingPoint, psi):
    model = dyn.model
    q = op.q
    YtY = model.selectors.YtY
    XtX = model.selectors.XtX
    saddle = dyn.saddle_matrix(q)
    M_alpha = np.linalg.inv(saddle)
    M_beta = M_alpha[: dyn.n3, : dyn.n3]
    dq = -np.einsum("k,kij->ij", psi, XtX)
    if model.n_strings:
        dq = dq - np.einsum("k,kij->ij", op.sigma, YtY)
    _, Jd_v = damper_jacobians(model, q, op.qdot)
    return M_beta, dq, Jd_v, -y_hat(model, q), -x_hat(model, q)


def linearize_compressible(dyn: CompressibleDynamics, operating_point: OperatingPoint | None = None,
                           psi=None, verify=False, rtol=1e-4, eq_tol=1e-8):
    """Linear model about a static equilibrium, controls u = [sigma; Psi].

    The bar force densities default to their passive values at the operating
    configuration.  The operating point must be static (qdot = 0) and
    satisfy q'' = 0 to ``eq_tol``; both conditions remove the velocity and
    inertia-derivative terms.  The force-density input enters xi3 as
    -sum Psi_k X_k^T X_k q, so the Psi block is -Xhat.
    """
    model = dyn.model
    op = operating_point or OperatingPoint.static(model)
    if np.any(op.qdot != 0.0):
        raise NotAtEquilibriumError("operating point must be static (qdot = 0)")
    psi = dyn.psi(op.q) if psi is None else np.asarray(psi, dtype=float)
    qdd, _, _ = dyn.evaluate(0.0, op.q, op.qdot, sigma=op.sigma, psi=psi, f_ext=op.f)
    resid = float(np.max(np.abs(qdd))) if qdd.size else 0.0
    if resid > eq_tol:
        raise NotAtEquilibriumError(f"|q''|_inf = {resid:.3g} at the operating point")

    M_beta, d_q, d_v, d_sigma, d_psi = _xi3_blocks(dyn, op, psi)
    n3 = dyn.n3
    A = np.block([[np.zeros((n3, n3)), np.eye(n3)], [M_beta @ d_q, M_beta @ d_v]])
    pad = lambda M: np.vstack([np.zeros((n3, M.shape[1])), M])  # noqa: E731
    lin = LinearModel(A, pad(M_beta @ d_sigma), pad(M_beta), op, B_psi=pad(M_beta @ d_psi))

    if verify:
        def xi(q=op.q, qd=op.qdot, sigma=op.sigma, ps=psi, f=op.f):
            return dyn.evaluate(0.0, q, qd, sigma=sigma, psi=ps, f_ext=f)[0]

        h = 1e-6
        numeric = {
            "xi_q": _central(lambda x: xi(q=x), op.q, h * max(1.0, np.linalg.norm(op.q))),
            "xi_qdot": _central(lambda x: xi(qd=x), op.qdot, h),
            "xi_sigma": _central(lambda x: xi(sigma=x), op.sigma,
                                 h * max(1.0, np.linalg.norm(op.sigma))),
            "xi_psi": _central(lambda x: xi(ps=x), psi, h * max(1.0, np.linalg.norm(psi))),
            "xi_f": _central(lambda x: xi(f=x), op.f, h * max(1.0, np.linalg.norm(op.f))),
        }
        analytic = {
            "xi_q": M_beta @ d_q, "xi_qdot": M_beta @ d_v, "xi_sigma": M_beta @ d_sigma,
            "xi_psi": M_beta @ d_psi, "xi_f": M_beta,
        }
        lin.fd_errors = {k: rel_error(analytic[k], numeric[k]) for k in analytic}
        bad = {k: v for k, v in lin.fd_errors.items() if v > rtol}
        if bad:
            raise LinearizationMismatch(f"finite-difference mismatch: {bad}")
    return lin
