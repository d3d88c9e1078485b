"""Time integration of the stacked state y = [q, qdot, W_f].

Two methods:

* ``"dp54"``: adaptive Dormand-Prince 5(4) with FSAL and a PI step-size
  controller.  The error of each component is scaled by
  ``abs_tol + rel_tol * max(|y_i|, |y_new_i|)`` and the RMS of the scaled
  vector must not exceed one.
* ``"trapezoidal"``: fixed-step implicit trapezoidal rule solved by a
  modified Newton iteration with a finite-difference Jacobian that is
  refreshed periodically.  Meant for the stiff axially elastic model.

After every accepted step the state is passed through
:func:`tensegrity.correction.correct_state` when corrections are enabled.
Only accepted step points are recorded; there is no dense output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .correction import CorrectionReport, CorrectionSettings, correct_state
from .rigid import ForceInputs, RigidDynamics, SystemState
from .topology import AssembledModel

# Dormand & Prince (1980) RK5(4)7M tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100,
                1 / 40])
_E = _B5 - _B4

METHODS = ("dp54", "trapezoidal")


class SimulationError(RuntimeError):
    """Integration or correction failure; carries the last good state."""

    def __init__(self, message, t=None, last_state=None):
        super().__init__(message)
        self.t = t
        self.last_state = last_state


@dataclass(frozen=True)
class IntegratorSettings:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-10
    h_init: float | None = None
    h_min: float = 1e-14
    h_max: float = math.inf
    method: str = "dp54"
    correction: CorrectionSettings = field(default_factory=CorrectionSettings)
    h_fixed: float | None = None
    newton_tol: float = 1e-12
    max_newton: int = 8
    jacobian_refresh: int = 50
    max_steps: int = 10_000_000
    abort_on_correction_failure: bool = True

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not 0 < self.h_min <= self.h_max:
            raise ValueError("need 0 < h_min <= h_max")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.h_fixed is not None and not self.h_fixed > 0:
            raise ValueError("h_fixed must be positive")

    def replace(self, **changes):
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return IntegratorSettings(**fields)


@dataclass
class Trajectory:
    """Accepted step points (post-correction) and per-step diagnostics."""

    t: np.ndarray
    y: np.ndarray
    reports: list
    constraint_norm: np.ndarray
    bar_length_error: np.ndarray
    energy_residual: np.ndarray
    correction_iterations: np.ndarray
    E0: float
    n_rhs: int = 0
    n_rejected: int = 0
    eval_index: np.ndarray | None = None

    @property
    def n3(self):
        return (self.y.shape[1] - 1) // 2

    @property
    def q(self):
        return self.y[:, : self.n3]

    @property
    def qdot(self):
        return self.y[:, self.n3: 2 * self.n3]

    @property
    def W_f(self):
        return self.y[:, -1]

    def node(self, p):
        """(len(t), 3) positions of node ``p`` (0-based)."""
        return self.q[:, 3 * p: 3 * p + 3]

    def state(self, i):
        return SystemState.from_vector(self.y[i], self.t[i])

    def __len__(self):
        return self.t.size


class _Counter:
    def __init__(self, fun):
        self.fun = fun
        self.calls = 0

    def __call__(self, t, y):
        self.calls += 1
        return self.fun(t, y)


def _error_norm(err, y, y_new, settings):
    scale = settings.abs_tol + settings.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def dp54_attempt(fun, t, y, h, k1):
    """One Dormand-Prince attempt.  Returns ``(y5, err_vec, k7)``."""
    K = np.empty((7, y.size))
    K[0] = k1
    for s in range(1, 7):
        ys = y + h * (np.asarray(_A[s]) @ K[:s])
        K[s] = fun(t + _C[s] * h, ys)
    y5 = y + h * (_B5[:6] @ K[:6])
    err = h * (_E @ K)
    return y5, err, K[6]


class DormandPrince:
    """Adaptive DP54 stepper with PI control (Hairer-Wanner constants)."""

    safety = 0.9
    fac_min = 0.2
    fac_max = 10.0
    beta = 0.04
    order = 5

    def __init__(self, fun, settings: IntegratorSettings):
        self.fun = fun
        self.settings = settings
        self.err_old = 1e-4
        self.rejected_last = False

    def initial_step(self, t, y, f0, t_end):
        s = self.settings
        if s.h_init is not None:
            return min(s.h_init, s.h_max)
        scale = s.abs_tol + s.rel_tol * np.abs(y)
        d0 = np.sqrt(np.mean((y / scale) ** 2))
        d1 = np.sqrt(np.mean((f0 / scale) ** 2))
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h0 = min(h0, abs(t_end - t))
        f1 = self.fun(t + h0, y + h0 * f0)
        d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
        if max(d1, d2) <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** (1.0 / self.order)
        return float(min(100 * h0, h1, s.h_max, abs(t_end - t)))

    def step(self, t, y, h, k1):
        """Try steps from ``h`` downward until one is accepted.

        Returns ``(t_new, y_new, k_last, h_used, h_next, err, n_rejected)``.
        """
        s = self.settings
        rejected = 0
        while True:
            if h < s.h_min:
                raise SimulationError(f"step size {h:.3g} fell below h_min at t = {t:.9g}", t)
            y_new, err_vec, k7 = dp54_attempt(self.fun, t, y, h, k1)
            err = _error_norm(err_vec, y, y_new, s)
            if not np.isfinite(err):
                h *= 0.25
                rejected += 1
                continue
            if err <= 1.0:
                if err == 0.0:
                    fac = self.fac_max
                else:
                    fac = self.safety * err ** (-0.2 + 0.75 * self.beta) * self.err_old ** self.beta
                    fac = min(self.fac_max, max(self.fac_min, fac))
                if self.rejected_last:
                    fac = min(fac, 1.0)
                self.err_old = max(err, 1e-4)
                self.rejected_last = False
                h_next = min(h * fac, s.h_max)
                return t + h, y_new, k7, h, h_next, err, rejected
            fac = max(self.fac_min, self.safety * err ** -0.2)
            h *= fac
            self.rejected_last = True
            rejected += 1


class Trapezoidal:
    """Fixed-step implicit trapezoidal rule with modified Newton."""

    def __init__(self, fun, settings: IntegratorSettings, n_state):
        self.fun = fun
        self.settings = settings
        self.lu = None
        self.h_lu = None
        self.age = 0
        self.n = n_state

    def jacobian(self, t, y, f0):
        J = np.empty((self.n, self.n))
        for j in range(self.n):
            dy = 1e-7 * max(1.0, abs(y[j]))
            yp = y.copy()
            yp[j] += dy
            J[:, j] = (self.fun(t, yp) - f0) / dy
        return J

    def _factor(self, t, y, f0, h):
        J = self.jacobian(t, y, f0)
        self.lu = scipy.linalg.lu_factor(np.eye(self.n) - 0.5 * h * J)
        self.h_lu = h
        self.age = 0

    def step(self, t, y, h, f0):
        s = self.settings
        if self.lu is None or self.age >= s.jacobian_refresh or self.h_lu != h:
            self._factor(t, y, f0, h)
        for attempt in range(2):
            z = y + h * f0
            base = y + 0.5 * h * f0
            for _ in range(s.max_newton):
                fz = self.fun(t + h, z)
                res = z - base - 0.5 * h * fz
                dz = scipy.linalg.lu_solve(self.lu, -res)
                z = z + dz
                if np.max(np.abs(dz)) <= s.newton_tol * (1.0 + np.max(np.abs(z))):
                    self.age += 1
                    return t + h, z, self.fun(t + h, z)
            self._factor(t, y, f0, h)
        raise SimulationError(f"Newton iteration failed to converge at t = {t:.9g}", t)


def _make_dynamics(system, inputs):
    if isinstance(system, AssembledModel):
        return RigidDynamics(system, inputs or ForceInputs())
    if inputs is not None:
        raise ValueError("pass inputs either to the dynamics object or here, not both")
    return system


def derivative(system, state: SystemState, inputs: ForceInputs | None = None):
    """d/dt (q, qdot, W_f) as a stacked vector."""
    dyn = _make_dynamics(system, inputs)
    return dyn.rhs(state.t, state.as_vector())


def step(system, state: SystemState, inputs=None, settings=None, h=None):
    """Take one accepted DP54 step from ``state``.

    Returns ``(new_state, h_next, error_estimate)``; no correction is applied.
    """
    settings = settings or IntegratorSettings()
    dyn = _make_dynamics(system, inputs)
    y = state.as_vector()
    stepper = DormandPrince(dyn.rhs, settings)
    k1 = dyn.rhs(state.t, y)
    if h is None:
        h = stepper.initial_step(state.t, y, k1, state.t + 1.0)
    t_new, y_new, _, _, h_next, err, _ = stepper.step(state.t, y, h, k1)
    return SystemState.from_vector(y_new, t_new), h_next, err


def default_fixed_step(dyn):
    return getattr(dyn, "default_step", 1e-4)


def simulate(system, state0: SystemState, inputs=None, settings=None, t_end=1.0,
             callback=None, t_eval=None):
    """Integrate from ``state0.t`` to ``t_end`` with per-step correction.

    ``system`` is an :class:`AssembledModel` (combined with ``inputs`` into a
    rigid model) or any dynamics object with ``rhs``, ``constraints`` and
    ``energy`` methods.  Steps are shortened to land exactly on every time in
    ``t_eval``; ``Trajectory.eval_index`` then points at those rows.
    """
    settings = settings or IntegratorSettings()
    dyn = _make_dynamics(system, inputs)
    fun = _Counter(dyn.rhs)
    t0 = float(state0.t)
    if t_end < t0:
        raise ValueError("t_end must not precede the initial time")
    corr = settings.correction
    E0 = dyn.energy(state0.q, state0.qdot) - state0.W_f

    ts, ys, reports = [t0], [state0.as_vector()], [CorrectionReport()]
    t, y = t0, ys[0].copy()
    stops = [] if t_eval is None else sorted({float(x) for x in np.atleast_1d(t_eval)})
    if stops and (stops[0] < t0 or stops[-1] > t_end):
        raise ValueError("t_eval must lie inside [t0, t_end]")
    n_eval = len(stops)
    eval_index = [0] if stops and stops[0] == t0 else []
    stops = [x for x in stops if x > t0]
    if not stops or stops[-1] < t_end:
        stops.append(float(t_end))
    if t_end == t0:
        return _finish(dyn, ts, ys, reports, E0, fun.calls, 0, eval_index)

    try:
        f0 = fun(t, y)
    except Exception as exc:
        raise SimulationError(f"{exc} (t = {t:.9g})", t, state0) from exc
    rejected = 0
    span = t_end - t0

    if settings.method == "dp54":
        stepper = DormandPrince(fun, settings)
        h = stepper.initial_step(t, y, f0, t_end)
    else:
        h_fix = settings.h_fixed or default_fixed_step(dyn)
        stepper = Trapezoidal(fun, settings, y.size)
        h = h_fix

    steps = 0
    while t < t_end:
        if steps >= settings.max_steps:
            raise SimulationError(f"max_steps reached at t = {t:.9g}", t,
                                  SystemState.from_vector(y, t))
        target = stops[0]
        last = t + h >= target - 1e-12 * span
        h_try = target - t if last else h
        try:
            if settings.method == "dp54":
                t_new, y_new, f_new, _, h_next, _, nrej = stepper.step(t, y, h_try, f0)
                rejected += nrej
            else:
                t_new, y_new, f_new = stepper.step(t, y, h_try, f0)
                h_next = h
        except SimulationError as exc:
            exc.last_state = SystemState.from_vector(y, t)
            raise
        except Exception as exc:
            raise SimulationError(f"{exc} (t = {t:.9g})", t,
                                  SystemState.from_vector(y, t)) from exc
        if last and settings.method == "dp54" and t_new < target:
            last = False
        if last:
            t_new = target
            stops.pop(0)

        state = SystemState.from_vector(y_new, t_new)
        if corr.enabled:
            state, rep = correct_state(dyn, state, E0, corr)
            if not rep.converged and settings.abort_on_correction_failure:
                raise SimulationError(
                    f"correction did not converge at t = {t_new:.9g} "
                    f"(|R| = {rep.post_constraint_norm:.3g}, "
                    f"energy residual = {rep.post_energy_residual:.3g})",
                    t_new, SystemState.from_vector(y, t))
            if rep.iterations:
                y_new = state.as_vector()
                f_new = fun(t_new, y_new)
        else:
            rep = CorrectionReport()

        t, y, f0 = t_new, y_new, f_new
        if settings.method == "dp54" and not last:
            h = h_next
        ts.append(t)
        ys.append(y.copy())
        reports.append(rep)
        if last and len(eval_index) < n_eval:
            eval_index.append(len(ts) - 1)
        steps += 1
        if callback is not None:
            callback(t, y, rep)
    return _finish(dyn, ts, ys, reports, E0, fun.calls, rejected, eval_index)


def _finish(dyn, ts, ys, reports, E0, calls, rejected, eval_index=None):
    Y = np.array(ys)
    n3 = (Y.shape[1] - 1) // 2
    cn = np.empty(len(ts))
    er = np.empty(len(ts))
    bars = []
    for i, row in enumerate(Y):
        q, qd = row[:n3], row[n3:2 * n3]
        cn[i] = np.linalg.norm(dyn.constraints(q))
        er[i] = dyn.energy(q, qd) - E0 - row[-1]
        bars.append(dyn.bar_length_residuals(q))
    return Trajectory(
        t=np.array(ts),
        y=Y,
        reports=reports,
        constraint_norm=cn,
        bar_length_error=np.array(bars).reshape(len(ts), -1),
        energy_residual=er,
        correction_iterations=np.array([r.iterations for r in reports]),
        E0=float(E0),
        n_rhs=calls,
        n_rejected=rejected,
        eval_index=None if eval_index is None else np.array(eval_index, dtype=int),
    )
