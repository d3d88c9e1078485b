"""Linearisation of the rigid dynamics, static equilibria and pre-stress.

The state of the linear model is x = [dq; dqdot] (the work state is left
out).  ``A`` has the block form [[0, I], [dxi/dq, dxi/dqdot]], ``B_sigma``
maps string force-density perturbations and ``B_f`` nodal force
perturbations.  Because the coordinates are not minimal, ``A`` carries
structural zero eigenvalues along directions that violate the linearised
constraints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .rigid import (RigidDynamics, constraint_jacobian, constraints,
                    damper_forces, string_force_densities)
from .topology import AssembledModel


class LinearizationMismatch(AssertionError):
    """Analytic Jacobian disagrees with finite differences."""


class EquilibriumError(RuntimeError):
    pass


@dataclass
class OperatingPoint:
    q: np.ndarray
    qdot: np.ndarray
    sigma: np.ndarray
    f: np.ndarray

    @classmethod
    def static(cls, model: AssembledModel, q=None, sigma=None, f=None):
        q = model.q0.copy() if q is None else np.asarray(q, dtype=float)
        if sigma is None:
            sigma = string_force_densities(model, q)
        f = np.zeros_like(q) if f is None else np.asarray(f, dtype=float)
        return cls(q, np.zeros_like(q), np.asarray(sigma, dtype=float), f)


@dataclass
class LinearModel:
    A: np.ndarray
    B_sigma: np.ndarray
    B_f: np.ndarray
    operating_point: OperatingPoint
    B_psi: np.ndarray | None = None
    fd_errors: dict = field(default_factory=dict)

    @property
    def n_state(self):
        return self.A.shape[0]

    @property
    def B_u(self):
        """Control matrix over [sigma; Psi] (only sigma for rigid bars)."""
        if self.B_psi is None:
            return self.B_sigma
        return np.hstack([self.B_sigma, self.B_psi])

    def blocks(self):
        out = {"A": self.A, "B_sigma": self.B_sigma, "B_f": self.B_f}
        if self.B_psi is not None:
            out["B_psi"] = self.B_psi
        return out

    def save(self, path):
        """Write every block as a row-major text matrix under a ``# block`` header."""
        with open(path, "w") as fh:
            fh.write("# tensegrity linear model: x = [dq; dqdot], dx/dt = A x + B_u du + B_f df\n")
            for name, mat in self.blocks().items():
                fh.write(f"# block {name} {mat.shape[0]} {mat.shape[1]}\n")
                np.savetxt(fh, mat, fmt="%.17g")
            op = self.operating_point
            for name in ("q", "qdot", "sigma", "f"):
                vec = np.atleast_2d(getattr(op, name))
                fh.write(f"# block op_{name} 1 {vec.shape[1]}\n")
                np.savetxt(fh, vec, fmt="%.17g")

    @classmethod
    def load(cls, path):
        blocks = read_blocks(path)
        op = OperatingPoint(*(blocks[f"op_{k}"].ravel() for k in ("q", "qdot", "sigma", "f")))
        return cls(blocks["A"], blocks["B_sigma"], blocks["B_f"], op, blocks.get("B_psi"))


def read_blocks(path):
    blocks, name, shape, rows = {}, None, None, []

    def flush():
        if name is not None:
            data = np.array(rows, dtype=float).reshape(shape)
            blocks[name] = data

    with open(path) as fh:
        for line in fh:
            if line.startswith("# block"):
                flush()
                _, _, name, r, c = line.split()
                shape, rows = (int(r), int(c)), []
            elif line.startswith("#") or not line.strip():
                continue
            else:
                rows.append([float(v) for v in line.split()])
    flush()
    return blocks


# --------------------------------------------------------------------------
# damper derivatives


def damper_jacobians(model: AssembledModel, q, qdot):
    """(d f_d / dq, d f_d / dqdot) for taut strings."""
    n3 = q.size
    Jq = np.zeros((n3, n3))
    Jv = np.zeros((n3, n3))
    c = model.damping
    if c == 0.0 or model.n_strings == 0:
        return Jq, Jv
    Y = model.selectors.Y
    I3 = np.eye(3)
    for k in range(model.n_strings):
        s = Y[k] @ q
        sd = Y[k] @ qdot
        ss = s @ s
        if np.sqrt(ss) < model.string_rest_lengths[k]:
            continue
        r = sd @ s
        ds = -c * (np.outer(s, sd) / ss + r / ss * I3 - 2.0 * r * np.outer(s, s) / ss**2)
        dv = -c * np.outer(s, s) / ss
        Jq += Y[k].T @ ds @ Y[k]
        Jv += Y[k].T @ dv @ Y[k]
    return Jq, Jv


def sigma_jacobian(model: AssembledModel, q):
    """d sigma / dq for passive strings (zero rows for slack strings)."""
    Y = model.selectors.Y
    J = np.zeros((model.n_strings, q.size))
    for k in range(model.n_strings):
        s = Y[k] @ q
        L = np.linalg.norm(s)
        if L >= model.string_rest_lengths[k]:
            J[k] = model.string_stiffness[k] * model.string_rest_lengths[k] / L**3 * (
                Y[k].T @ s)
    return J


def y_hat(model: AssembledModel, q):
    """3n x n_s matrix whose k-th column is Y_k^T Y_k q."""
    if model.n_strings == 0:
        return np.zeros((q.size, 0))
    return np.einsum("kij,j->ik", model.selectors.YtY, q)


def x_hat(model: AssembledModel, q):
    """3n x n_b matrix whose k-th column is X_k^T X_k q."""
    if model.n_bars == 0:
        return np.zeros((q.size, 0))
    return np.einsum("kij,j->ik", model.selectors.XtX, q)


# --------------------------------------------------------------------------
# rigid linearisation


def _xi_blocks(model: AssembledModel, op: OperatingPoint):
    q, qd, sigma, f = op.q, op.qdot, op.sigma, op.f
    n3 = q.size
    nl = model.n_linear
    XtX = model.selectors.XtX
    YtY = model.selectors.YtY
    Minv = model.M_inv

    Rq = constraint_jacobian(model, q)
    H = Minv @ Rq.T
    S = Rq @ H
    S_fac = scipy.linalg.cho_factor(S)

    Yh = y_hat(model, q)
    xi1 = -Yh @ sigma + model.G + f + damper_forces(model, q, qd)
    xi2 = np.concatenate([np.zeros(nl), 2.0 * np.einsum("i,kij,j->k", qd, XtX, qd)])
    mu = scipy.linalg.cho_solve(S_fac, xi2 + Rq @ Minv @ xi1)

    Jd_q, Jd_v = damper_jacobians(model, q, qd)
    J1 = -np.einsum("k,kij->ij", sigma, YtY) + Jd_q if model.n_strings else Jd_q.copy()
    y = Minv @ xi1
    Hmu = H @ mu

    # d xi / dq, one coordinate direction at a time
    xi_q = np.zeros((n3, n3))
    e = np.zeros(n3)
    for i in range(n3):
        e[:] = 0.0
        e[i] = 1.0
        dRq = np.zeros_like(Rq)
        if model.n_bars:
            dRq[nl:] = 2.0 * (XtX @ e)
        dxi1 = J1[:, i]
        dxit = dRq @ y + Rq @ (Minv @ dxi1)
        dS_mu = dRq @ Hmu + Rq @ (Minv @ (dRq.T @ mu))
        dmu = scipy.linalg.cho_solve(S_fac, dxit - dS_mu)
        xi_q[:, i] = Minv @ (dxi1 - dRq.T @ mu - Rq.T @ dmu)

    Pi = np.eye(n3) - Rq.T @ scipy.linalg.cho_solve(S_fac, Rq @ Minv)
    dxi2_dv = np.zeros((Rq.shape[0], n3))
    if model.n_bars:
        dxi2_dv[nl:] = 4.0 * (XtX @ qd)
    xi_v = Minv @ (Pi @ Jd_v - Rq.T @ scipy.linalg.cho_solve(S_fac, dxi2_dv))
    xi_f = Minv @ Pi
    xi_sigma = -xi_f @ Yh
    return xi_q, xi_v, xi_sigma, xi_f


def _assemble(xi_q, xi_v, xi_u, xi_f):
    n3 = xi_q.shape[0]
    A = np.block([[np.zeros((n3, n3)), np.eye(n3)], [xi_q, xi_v]])
    pad = lambda M: np.vstack([np.zeros((n3, M.shape[1])), M])  # noqa: E731
    return A, pad(xi_u), pad(xi_f)


def _central(fun, x0, h):
    f0 = fun(x0)
    J = np.zeros((f0.size, x0.size))
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (fun(xp) - fun(xm)) / (2.0 * h)
    return J


def rel_error(analytic, numeric):
    scale = max(np.max(np.abs(analytic)) if analytic.size else 0.0, 1e-300)
    return float(np.max(np.abs(analytic - numeric)) / scale) if analytic.size else 0.0


def fd_rigid_blocks(model: AssembledModel, op: OperatingPoint, step=1e-6):
    """Central-difference (xi_q, xi_v, xi_sigma, xi_f) through the rigid EOM."""
    dyn = RigidDynamics(model)

    def xi(q=op.q, qd=op.qdot, sigma=op.sigma, f=op.f):
        return dyn.evaluate(0.0, q, qd, sigma=sigma, f_ext=f).qddot

    hq = step * max(1.0, np.linalg.norm(op.q))
    hv = step * max(1.0, np.linalg.norm(op.qdot))
    hs = step * max(1.0, np.linalg.norm(op.sigma))
    hf = step * max(1.0, np.linalg.norm(op.f))
    return (_central(lambda x: xi(q=x), op.q, hq),
            _central(lambda x: xi(qd=x), op.qdot, hv),
            _central(lambda x: xi(sigma=x), op.sigma, hs),
            _central(lambda x: xi(f=x), op.f, hf))


def linearize_rigid(model: AssembledModel, operating_point: OperatingPoint | None = None,
                    verify=False, rtol=1e-5, passive=False):
    """Analytic state-space model of the rigid dynamics about an operating point.

    With ``passive=True`` the string force densities are treated as functions
    of the configuration (sigma = K (1 - l_s/|s|)), so their dependence on q is
    folded into A.  ``verify=True`` compares every block with central finite
    differences of the nonlinear EOM and raises on disagreement.
    """
    op = operating_point or OperatingPoint.static(model)
    xi_q, xi_v, xi_s, xi_f = _xi_blocks(model, op)
    errors = {}
    if verify:
        numeric = fd_rigid_blocks(model, op)
        for name, a, b in zip(("xi_q", "xi_qdot", "xi_sigma", "xi_f"),
                              (xi_q, xi_v, xi_s, xi_f), numeric):
            errors[name] = rel_error(a, b)
        bad = {k: v for k, v in errors.items() if v > rtol}
        if bad:
            raise LinearizationMismatch(f"finite-difference mismatch: {bad}")
    if passive:
        xi_q = xi_q + xi_s @ sigma_jacobian(model, op.q)
    A, B_s, B_f = _assemble(xi_q, xi_v, xi_s, xi_f)
    return LinearModel(A, B_s, B_f, op, fd_errors=errors)


def constraint_tangent_basis(Rq):
    """Orthonormal basis of the null space of ``Rq``."""
    return scipy.linalg.null_space(Rq)


def restricted_eigenvalues(lin: LinearModel, model: AssembledModel):
    """Eigenvalues of A on x = [T a; T b], T spanning ker R_q at the operating point.

    Projecting with the tangent basis removes the structural modes that come
    from the non-minimal coordinates.
    """
    Rq = constraint_jacobian(model, lin.operating_point.q)
    T = constraint_tangent_basis(Rq)
    W = scipy.linalg.block_diag(T, T)
    A_red = W.T @ lin.A @ W
    return np.linalg.eigvals(A_red)


# --------------------------------------------------------------------------
# equilibria and pre-stress


def find_equilibrium(model: AssembledModel, q_guess=None, sigma=None, f0=None, tol=1e-10,
                     max_iter=50):
    """Newton solve of xi(q, 0, sigma, f0) = 0 together with R(q) = 0.

    Unknowns are q and the multipliers lambda; the residual is
    [xi1(q) + R_q^T lambda; R(q)].  ``sigma=None`` uses passive strings.
    """
    q = (model.q0 if q_guess is None else np.asarray(q_guess, dtype=float)).copy()
    f0 = np.zeros_like(q) if f0 is None else np.asarray(f0, dtype=float)
    n3 = q.size
    nl = model.n_linear
    XtX = model.selectors.XtX
    YtY = model.selectors.YtY
    dyn = RigidDynamics(model)
    zero = np.zeros(n3)

    def accel(q):
        s = string_force_densities(model, q) if sigma is None else sigma
        return dyn.evaluate(0.0, q, zero, sigma=s, f_ext=f0)

    res = accel(q)
    lam = res.lam
    for it in range(max_iter + 1):
        if (np.max(np.abs(res.qddot)) <= tol
                and np.linalg.norm(constraints(model, q)) <= tol):
            return q
        if it == max_iter:
            break
        s = string_force_densities(model, q) if sigma is None else sigma
        Yh = y_hat(model, q)
        Rq = constraint_jacobian(model, q)
        xi1 = -Yh @ s + model.G + f0
        J1 = -np.einsum("k,kij->ij", s, YtY) if model.n_strings else np.zeros((n3, n3))
        if sigma is None:
            J1 = J1 - Yh @ sigma_jacobian(model, q)
        if model.n_bars:
            J1 = J1 + 2.0 * np.einsum("k,kij->ij", lam[nl:], XtX)
        F = np.concatenate([xi1 + Rq.T @ lam, constraints(model, q)])
        m = Rq.shape[0]
        J = np.block([[J1, Rq.T], [Rq, np.zeros((m, m))]])
        delta = np.linalg.lstsq(J, -F, rcond=1e-13)[0]
        q = q + delta[:n3]
        lam = lam + delta[n3:]
        res = accel(q)
    raise EquilibriumError(f"Newton did not converge in {max_iter} iterations "
                           f"(|q''|_inf = {np.max(np.abs(res.qddot)):.3g})")


def prestress(model: AssembledModel, q=None, f0=None, sigma_min=None, sigma_fixed=None):
    """Force densities that hold configuration ``q`` in static equilibrium.

    Solves the LP  min sum(sigma)  s.t.  Yhat sigma - R_q^T lambda = G + f0,
    sigma >= sigma_min, lambda free, then polishes the equality to round-off
    with a minimum-norm least-squares update.  ``sigma_fixed`` maps string
    indices to prescribed values.  Returns ``(sigma, lambda)``.
    """
    q = model.q0 if q is None else np.asarray(q, dtype=float)
    f0 = np.zeros_like(q) if f0 is None else np.asarray(f0, dtype=float)
    ns = model.n_strings
    Yh = y_hat(model, q)
    Rq = constraint_jacobian(model, q)
    m = Rq.shape[0]
    A_eq = np.hstack([Yh, -Rq.T])
    b_eq = model.G + f0
    if sigma_min is None:
        sigma_min = 0.0
    lo = np.broadcast_to(np.asarray(sigma_min, dtype=float), (ns,)).copy()
    hi = np.full(ns, np.inf)
    for k, v in (sigma_fixed or {}).items():
        lo[k] = hi[k] = v
    bounds = [(lo[k], None if np.isinf(hi[k]) else hi[k]) for k in range(ns)]
    bounds += [(None, None)] * m
    cost = np.concatenate([np.ones(ns), np.zeros(m)])
    sol = scipy.optimize.linprog(cost, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if not sol.success:
        raise EquilibriumError(f"no admissible pre-stress: {sol.message}")
    x = sol.x
    x = x + np.linalg.lstsq(A_eq, b_eq - A_eq @ x, rcond=1e-13)[0]
    x = x + np.linalg.lstsq(A_eq, b_eq - A_eq @ x, rcond=1e-13)[0]
    return x[:ns], x[ns:]


def rest_lengths_for(model: AssembledModel, sigma, q=None):
    """String rest lengths l_s = |s| (1 - sigma/K) realising ``sigma`` at ``q``."""
    q = model.q0 if q is None else q
    S = (model.selectors.Y @ q) if model.n_strings else np.zeros((0, 3))
    L = np.linalg.norm(S, axis=1)
    ratio = np.asarray(sigma) / model.string_stiffness
    if np.any(ratio >= 1.0):
        raise EquilibriumError("pre-stress exceeds string stiffness (rest length <= 0)")
    return L * (1.0 - ratio)

