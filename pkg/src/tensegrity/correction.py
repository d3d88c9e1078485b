"""Post-step projection of (q, qdot, W_f) back onto the constraint and energy manifold.

The residuals corrected are

* position level: R(q) = 0,
* velocity level: R_q(q) qdot = 0,
* energy: E(q, qdot) - E0 - W_f = 0,

by repeatedly solving a linearised system for the minimum-norm update
x = (dq, dqdot, dW_f).  ``gamma`` is a single threshold used both for
``|R|_2`` (length^2 for bar rows, length for boundary rows) and for the energy
residual in joules; no unit weighting is applied.

Anything exposing ``constraints``, ``constraint_jacobian``, ``q_rate_matrix``,
``energy`` and ``energy_gradients`` can be corrected, which is how the
axially elastic model reuses this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .rigid import RigidDynamics, SystemState
from .topology import AssembledModel


@dataclass(frozen=True)
class CorrectionSettings:
    gamma: float = 1e-10
    max_iterations: int = 10
    energy_correction_enabled: bool = True
    geometric_correction_enabled: bool = True

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")

    @property
    def enabled(self):
        return self.energy_correction_enabled or self.geometric_correction_enabled


@dataclass
class CorrectionReport:
    iterations: int = 0
    converged: bool = True
    pre_constraint_norm: float = 0.0
    post_constraint_norm: float = 0.0
    pre_energy_residual: float = 0.0
    post_energy_residual: float = 0.0
    delta_norms: tuple = (0.0, 0.0, 0.0)
    rank_deficient: bool = False
    rank: int = -1
    history: list = field(default_factory=list)


def _as_dynamics(obj):
    if isinstance(obj, AssembledModel):
        return RigidDynamics(obj)
    return obj


def q_jacobian_rate_matrix(dynamics, q, qdot):
    """Q such that (dR_q/dq . dq) qdot = Q dq."""
    return _as_dynamics(dynamics).q_rate_matrix(q, qdot)


def energy_residual(dynamics, state: SystemState, E0):
    dyn = _as_dynamics(dynamics)
    return dyn.energy(state.q, state.qdot) - E0 - state.W_f


def assemble_correction_system(dynamics, state: SystemState, E0, settings=None):
    """Build (A_c, b_c) for the enabled correction blocks.

    Unknown ordering is [dq (3n), dqdot (3n), dW_f (1)]; the last column is
    dropped when energy correction is off.
    """
    settings = settings or CorrectionSettings()
    dyn = _as_dynamics(dynamics)
    q, qd = state.q, state.qdot
    n3 = q.size
    energy_on = settings.energy_correction_enabled
    ncol = 2 * n3 + (1 if energy_on else 0)
    rows, rhs = [], []

    if settings.geometric_correction_enabled:
        Rq = dyn.constraint_jacobian(q)
        m = Rq.shape[0]
        top = np.zeros((m, ncol))
        top[:, :n3] = Rq
        mid = np.zeros((m, ncol))
        mid[:, :n3] = dyn.q_rate_matrix(q, qd)
        mid[:, n3:2 * n3] = Rq
        rows += [top, mid]
        rhs += [-dyn.constraints(q), -(Rq @ qd)]

    if energy_on:
        dEdq, dEdqd = dyn.energy_gradients(q, qd)
        last = np.zeros((1, ncol))
        last[0, :n3] = dEdq
        last[0, n3:2 * n3] = dEdqd
        last[0, -1] = -1.0
        rows.append(last)
        rhs.append([E0 - dyn.energy(q, qd) + state.W_f])

    if not rows:
        return np.zeros((0, ncol)), np.zeros(0)
    return np.vstack(rows), np.concatenate([np.atleast_1d(r) for r in rhs])


def min_norm_solve(A_c, b_c, rtol=1e-12):
    """Minimum-norm solution of the under-determined system A_c x = b_c.

    Uses an economic QR of A_c^T (x = Q R^-T b) followed by one refinement
    step.  If A_c is numerically rank deficient the solve falls back to an SVD
    pseudoinverse with cutoff ``rtol * s_max``.

    Returns ``(x, rank, full_rank)``.
    """
    A_c = np.asarray(A_c, dtype=float)
    b_c = np.asarray(b_c, dtype=float)
    m, ncol = A_c.shape
    if m == 0:
        return np.zeros(ncol), 0, True
    if not np.any(b_c):
        return np.zeros(ncol), m, True

    Qf, Rf = scipy.linalg.qr(A_c.T, mode="economic")
    d = np.abs(np.diag(Rf))
    full_rank = m <= ncol and d.min() > rtol * d.max()
    if full_rank:
        def solve(rhs):
            return Qf @ scipy.linalg.solve_triangular(Rf, rhs, trans="T")
        x = solve(b_c)
        x += solve(b_c - A_c @ x)
        return x, m, True

    x, _, rank, _ = np.linalg.lstsq(A_c, b_c, rcond=rtol)
    return x, int(rank), False


def _residuals(dyn, state, E0, settings):
    rnorm = float(np.linalg.norm(dyn.constraints(state.q)))
    eres = float(dyn.energy(state.q, state.qdot) - E0 - state.W_f)
    return rnorm, eres


def _needs_work(rnorm, eres, settings):
    return ((settings.geometric_correction_enabled and rnorm > settings.gamma)
            or (settings.energy_correction_enabled and abs(eres) > settings.gamma))


def correct_state(dynamics, state: SystemState, E0, settings=None):
    """Iterate assemble -> solve -> update until both residual tests pass.

    Returns ``(new_state, report)``.  On non-convergence the best state found
    is returned with ``report.converged = False``.
    """
    settings = settings or CorrectionSettings()
    dyn = _as_dynamics(dynamics)
    rnorm, eres = _residuals(dyn, state, E0, settings)
    report = CorrectionReport(pre_constraint_norm=rnorm, pre_energy_residual=eres,
                              post_constraint_norm=rnorm, post_energy_residual=eres)
    if not settings.enabled or not _needs_work(rnorm, eres, settings):
        return state, report

    q, qd, W = state.q.copy(), state.qdot.copy(), state.W_f
    n3 = q.size
    total = np.zeros(2 * n3 + 1)
    current = state
    while _needs_work(rnorm, eres, settings) and report.iterations < settings.max_iterations:
        A_c, b_c = assemble_correction_system(dyn, current, E0, settings)
        x, rank, full = min_norm_solve(A_c, b_c)
        if not full:
            report.rank_deficient = True
            report.rank = rank
        q = q + x[:n3]
        qd = qd + x[n3:2 * n3]
        total[: 2 * n3] += x[: 2 * n3]
        if settings.energy_correction_enabled:
            W = W + x[-1]
            total[-1] += x[-1]
        current = SystemState(q, qd, W, state.t)
        rnorm, eres = _residuals(dyn, current, E0, settings)
        report.iterations += 1
        report.history.append((rnorm, eres))

    report.converged = not _needs_work(rnorm, eres, settings)
    report.post_constraint_norm = rnorm
    report.post_energy_residual = eres
    report.delta_norms = (float(np.linalg.norm(total[:n3])),
                          float(np.linalg.norm(total[n3:2 * n3])), float(abs(total[-1])))
    if report.rank < 0:
        report.rank = A_c.shape[0]
    return current, report
