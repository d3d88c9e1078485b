"""Rigid-bar equations of motion.

Module-level functions evaluate single quantities straight from the selector
definitions and are meant for clarity and testing.  :class:`RigidDynamics`
bundles a model with its force inputs and the fast kernels, and is what the
integrator and the correction step consume.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .topology import AssembledModel

RCOND_THRESHOLD = 1e-12


class SingularConstraintError(RuntimeError):
    """The constraint Schur complement R_q M^-1 R_q^T is (nearly) singular."""

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = tuple(rows)


class DegenerateMemberError(ValueError):
    """A string or bar has collapsed to zero length."""


@dataclass
class SystemState:
    q: np.ndarray
    qdot: np.ndarray
    W_f: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).copy()
        self.qdot = np.asarray(self.qdot, dtype=float).copy()
        self.W_f = float(self.W_f)
        self.t = float(self.t)
        if self.q.shape != self.qdot.shape or self.q.ndim != 1 or self.q.size % 3:
            raise ValueError("q and qdot must be 1-D arrays of equal length 3n")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot))
                and np.isfinite(self.W_f)):
            raise ValueError("state entries must be finite")

    @classmethod
    def at_rest(cls, model: AssembledModel, q=None, t=0.0):
        q = model.q0 if q is None else q
        return cls(q, np.zeros_like(q), 0.0, t)

    def as_vector(self):
        return np.concatenate([self.q, self.qdot, [self.W_f]])

    @classmethod
    def from_vector(cls, y, t=0.0):
        n3 = (y.size - 1) // 2
        return cls(y[:n3], y[n3:2 * n3], y[-1], t)


ForceCallback = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


@dataclass
class ForceInputs:
    """String force densities and external nodal forces.

    ``sigma=None`` means passive strings: force densities follow from the
    rest lengths at every evaluation.  ``f_ext`` is either a constant vector
    or a callback ``f(t, q, qdot)``.
    """

    sigma: Optional[np.ndarray] = None
    f_ext: object = None

    def __post_init__(self):
        if self.sigma is not None:
            self.sigma = np.asarray(self.sigma, dtype=float)
            if np.any(self.sigma < 0):
                raise ValueError("string force densities must be non-negative")

    def force(self, t, q, qdot):
        if self.f_ext is None:
            return np.zeros_like(q)
        if callable(self.f_ext):
            return np.asarray(self.f_ext(t, q, qdot), dtype=float)
        return np.asarray(self.f_ext, dtype=float)


@dataclass
class RigidEomResult:
    qddot: np.ndarray
    lam: np.ndarray
    power: float = 0.0
    rcond: float = 1.0


# --------------------------------------------------------------------------
# reference formulas


def mass_matrix(model: AssembledModel):
    return model.M


def gravity_vector(model: AssembledModel):
    return model.G


def gravity_potential(model: AssembledModel, q):
    return -float(model.G @ q)


def _string_vectors(model, q):
    N = np.asarray(q, dtype=float).reshape(-1, 3)
    si, sj = model.string_nodes.T
    S = N[sj] - N[si]
    L = np.linalg.norm(S, axis=1)
    if np.any(L == 0.0):
        bad = np.flatnonzero(L == 0.0).tolist()
        raise DegenerateMemberError(f"strings {bad} have zero length")
    return S, L


def string_force_densities(model: AssembledModel, q):
    """Passive sigma_k = K_k (1 - l_sk / |s_k|), zero for slack strings."""
    _, L = _string_vectors(model, q)
    K = model.string_stiffness
    l_s = model.string_rest_lengths
    return np.where(L >= l_s, K * (1.0 - l_s / L), 0.0)


def string_potential(model: AssembledModel, q):
    _, L = _string_vectors(model, q)
    stretch = np.maximum(L - model.string_rest_lengths, 0.0)
    return 0.5 * float(np.sum(model.string_stiffness * stretch**2))


def string_potential_gradient(model: AssembledModel, q, sigma=None):
    """Row vector sum_k sigma_k q^T Y_k^T Y_k."""
    if sigma is None:
        sigma = string_force_densities(model, q)
    YtY = model.selectors.YtY
    return np.einsum("k,kij,j->i", sigma, YtY, q) if len(sigma) else np.zeros_like(q)


def damper_forces(model: AssembledModel, q, qdot):
    """f_d = sum_k Y_k^T f_dk with f_dk = -c (sdot.s) s / (s.s) on taut strings."""
    S, L = _string_vectors(model, q)
    Sd = model.selectors.Y @ qdot if model.n_strings else np.zeros((0, 3))
    taut = L >= model.string_rest_lengths
    coef = np.where(taut, -model.damping * np.einsum("ka,ka->k", Sd, S) / L**2, 0.0)
    fk = coef[:, None] * S
    if model.n_strings == 0:
        return np.zeros_like(q)
    return np.einsum("kai,ka->i", model.selectors.Y, fk)


def bar_vectors(model: AssembledModel, q):
    N = np.asarray(q, dtype=float).reshape(-1, 3)
    bi, bj = model.bar_nodes.T
    return N[bj] - N[bi]


def constraints(model: AssembledModel, q):
    """R(q) = [A q - b; |b_k|^2 - l_k^2]."""
    B = bar_vectors(model, q)
    return np.concatenate([model.A @ q - model.b,
                           np.einsum("ka,ka->k", B, B) - model.bar_lengths**2])


def constraint_jacobian(model: AssembledModel, q):
    X = model.selectors.X
    bar_rows = 2.0 * np.einsum("kai,kaj,j->ki", X, X, q) if model.n_bars else np.zeros(
        (0, q.size))
    return np.vstack([model.A, bar_rows])


def constraint_accel_rhs(model: AssembledModel, qdot):
    """xi2 = [0; 2 qdot^T X_k^T X_k qdot]."""
    Bd = bar_vectors(model, qdot)
    return np.concatenate([np.zeros(model.n_linear), 2.0 * np.einsum("ka,ka->k", Bd, Bd)])


def kinetic_energy(model: AssembledModel, qdot):
    return 0.5 * float(qdot @ model.M @ qdot)


def total_energy(model: AssembledModel, state: SystemState):
    return (kinetic_energy(model, state.qdot) + string_potential(model, state.q)
            + gravity_potential(model, state.q))


def bar_angular_velocities(model: AssembledModel, q, qdot):
    """omega_k = b_k x bdot_k / l_k^2 (no spin about the bar axis)."""
    B = bar_vectors(model, q)
    Bd = bar_vectors(model, qdot)
    return np.cross(B, Bd) / np.einsum("ka,ka->k", B, B)[:, None]


def redundant_constraint_rows(Rq, tol=1e-10):
    """Indices of rows of ``Rq`` that depend linearly on earlier ones."""
    if Rq.shape[0] == 0:
        return []
    _, Rfac, piv = scipy.linalg.qr(Rq.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(Rfac))
    rank = int(np.sum(d > tol * max(d[0], 1e-300)))
    return sorted(int(p) for p in piv[rank:])


def eom_rhs(model: AssembledModel, state: SystemState, inputs: ForceInputs | None = None):
    """q'' and lambda for one state, via the model's cached kernels."""
    return RigidDynamics(model, inputs or ForceInputs()).evaluate(state.t, state.q, state.qdot)


# --------------------------------------------------------------------------
# bundled dynamics


class RigidDynamics:
    """Model plus inputs; the object the integrator and corrector work with."""

    compressible = False

    def __init__(self, model: AssembledModel, inputs: ForceInputs | None = None,
                 kernels=None):
        self.model = model
        self.inputs = inputs or ForceInputs()
        self.kernels = kernels or model.kernels
        if self.inputs.sigma is not None and self.inputs.sigma.shape != (model.n_strings,):
            raise ValueError(f"sigma needs {model.n_strings} entries")
        self.n3 = 3 * model.n

    # forces -------------------------------------------------------------

    def sigma(self, q):
        if self.inputs.sigma is not None:
            return self.inputs.sigma
        L, sigma = self.kernels.string_state(q)
        if np.any(L == 0.0):
            raise DegenerateMemberError("a string has zero length")
        return sigma

    def evaluate(self, t, q, qdot, sigma=None, f_ext=None) -> RigidEomResult:
        q = np.ascontiguousarray(q, dtype=float)
        qdot = np.ascontiguousarray(qdot, dtype=float)
        if sigma is None:
            sigma = self.sigma(q)
        if f_ext is None:
            f_ext = self.inputs.force(t, q, qdot)
        qdd, lam, power, rcond = self.kernels.rigid_accel(
            q, qdot, np.ascontiguousarray(f_ext, dtype=float),
            np.ascontiguousarray(sigma, dtype=float))
        if not rcond >= RCOND_THRESHOLD:
            Rq = constraint_jacobian(self.model, q)
            rows = redundant_constraint_rows(Rq)
            raise SingularConstraintError(
                f"R_q M^-1 R_q^T is singular (rcond estimate {rcond:.3g}); "
                f"redundant constraint rows: {rows}", rows)
        return RigidEomResult(qdd, lam, float(power), float(rcond))

    def rhs(self, t, y):
        """Time derivative of the stacked state [q, qdot, W_f]."""
        n3 = self.n3
        q, qd = y[:n3], y[n3:2 * n3]
        res = self.evaluate(t, q, qd)
        out = np.empty_like(y)
        out[:n3] = qd
        out[n3:2 * n3] = res.qddot
        out[-1] = res.power
        return out

    # constraint and energy interface used by the corrector --------------

    def constraints(self, q):
        return constraints(self.model, q)

    def constraint_jacobian(self, q):
        return constraint_jacobian(self.model, q)

    def q_rate_matrix(self, q, qdot):
        """Q with (dR_q/dq . dq) qdot = Q dq; bar rows 2 qdot^T X_k^T X_k."""
        Q = constraint_jacobian(self.model, qdot)
        Q[: self.model.n_linear] = 0.0
        return Q

    def bar_length_residuals(self, q):
        B = bar_vectors(self.model, q)
        return np.einsum("ka,ka->k", B, B) - self.model.bar_lengths**2

    def energy(self, q, qdot):
        return (kinetic_energy(self.model, qdot) + string_potential(self.model, q)
                + gravity_potential(self.model, q))

    def energy_gradients(self, q, qdot):
        """(dE/dq, dE/dqdot) for passive strings."""
        sigma = string_force_densities(self.model, q)
        dq = string_potential_gradient(self.model, q, sigma) - self.model.G
        return dq, self.model.M @ qdot
