"""Per-evaluation hot loops.

Each kernel exists twice: ``*_loop`` (plain loops, compiled by numba when
enabled) and ``*_vec`` (vectorised numpy).  The public names at the bottom of
the module point at one or the other depending on :func:`tensegrity._jit.backend`.

Members are passed as index arrays: string ``k`` runs from node ``si[k]`` to
node ``sj[k]`` so that ``s_k = n[sj[k]] - n[si[k]]``.  The numpy versions take
the dense connectivity matrices as well, which is how they vectorise.
"""

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ._jit import NUMBA_AVAILABLE, njit


# --------------------------------------------------------------------------
# strings


@njit
def _string_state_loop(q, si, sj, K, l_s):
    ns = si.shape[0]
    lengths = np.empty(ns)
    sigma = np.empty(ns)
    for k in range(ns):
        i3 = 3 * si[k]
        j3 = 3 * sj[k]
        ss = 0.0
        for a in range(3):
            d = q[j3 + a] - q[i3 + a]
            ss += d * d
        L = np.sqrt(ss)
        lengths[k] = L
        if L >= l_s[k] and L > 0.0:
            sigma[k] = K[k] * (1.0 - l_s[k] / L)
        else:
            sigma[k] = 0.0
    return lengths, sigma


@njit
def _bar_psi_loop(q, bi, bj, K_b, l0):
    nb = bi.shape[0]
    lengths = np.empty(nb)
    psi = np.empty(nb)
    for k in range(nb):
        i3 = 3 * bi[k]
        j3 = 3 * bj[k]
        ss = 0.0
        for a in range(3):
            d = q[j3 + a] - q[i3 + a]
            ss += d * d
        L = np.sqrt(ss)
        lengths[k] = L
        psi[k] = K_b[k] * (1.0 - l0[k] / L) if L > 0.0 else 0.0
    return lengths, psi


def _bar_psi_vec(q, C_b, K_b, l0):
    L = np.linalg.norm(C_b @ q.reshape(-1, 3), axis=1)
    with np.errstate(divide="ignore"):
        psi = np.where(L > 0.0, K_b * (1.0 - l0 / L), 0.0)
    return L, psi


def _string_state_vec(q, C_s, K, l_s):
    S = C_s @ q.reshape(-1, 3)
    L = np.sqrt(np.einsum("ka,ka->k", S, S))
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma = np.where((L >= l_s) & (L > 0.0), K * (1.0 - l_s / L), 0.0)
    return L, sigma


@njit
def _add_string_forces(q, qd, si, sj, sigma, l_s, c, out):
    """Add spring and damper forces into ``out``; return damper power."""
    power = 0.0
    for k in range(si.shape[0]):
        i3 = 3 * si[k]
        j3 = 3 * sj[k]
        ss = 0.0
        sds = 0.0
        for a in range(3):
            d = q[j3 + a] - q[i3 + a]
            dd = qd[j3 + a] - qd[i3 + a]
            ss += d * d
            sds += d * dd
        coef = -sigma[k]
        if c > 0.0 and ss >= l_s[k] * l_s[k]:
            damp = -c * sds / ss
            coef += damp
            power += damp * sds
        for a in range(3):
            d = q[j3 + a] - q[i3 + a]
            out[j3 + a] += coef * d
            out[i3 + a] -= coef * d
    return power


def _string_forces_vec(q, qd, C_s, sigma, l_s, c):
    S = C_s @ q.reshape(-1, 3)
    Sd = C_s @ qd.reshape(-1, 3)
    ss = np.einsum("ka,ka->k", S, S)
    sds = np.einsum("ka,ka->k", S, Sd)
    if c > 0.0:
        damp = np.where(ss >= l_s * l_s, -c * sds / ss, 0.0)
    else:
        damp = np.zeros_like(ss)
    F = C_s.T @ ((damp - sigma)[:, None] * S)
    return F.ravel(), float(damp @ sds)


@njit
def _damper_loop(q, qd, si, sj, l_s, c):
    out = np.zeros(q.shape[0])
    zero = np.zeros(si.shape[0])
    _add_string_forces(q, qd, si, sj, zero, l_s, c, out)
    return out


# --------------------------------------------------------------------------
# rigid bars


@njit
def _cholesky_solve(S, rhs):
    """Dense Cholesky solve; returns (x, rcond estimate).  rcond 0 on failure."""
    m = S.shape[0]
    L = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1):
            acc = S[i, j]
            for p in range(j):
                acc -= L[i, p] * L[j, p]
            if i == j:
                if acc <= 0.0:
                    return np.full(m, np.nan), 0.0
                L[i, i] = np.sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
    y = np.empty(m)
    for i in range(m):
        acc = rhs[i]
        for p in range(i):
            acc -= L[i, p] * y[p]
        y[i] = acc / L[i, i]
    x = np.empty(m)
    for i in range(m - 1, -1, -1):
        acc = y[i]
        for p in range(i + 1, m):
            acc -= L[p, i] * x[p]
        x[i] = acc / L[i, i]
    dmin = L[0, 0]
    dmax = L[0, 0]
    for i in range(m):
        dmin = min(dmin, L[i, i])
        dmax = max(dmax, L[i, i])
    return x, (dmin / dmax) ** 2


@njit
def _rigid_accel_loop(q, qd, f_ext, M_inv, G, A, bi, bj, si, sj, sigma, l_s, c):
    n3 = q.shape[0]
    nl = A.shape[0]
    nb = bi.shape[0]
    m = nl + nb

    xi1 = G + f_ext
    power = 0.0
    for p in range(n3):
        power += f_ext[p] * qd[p]
    power += _add_string_forces(q, qd, si, sj, sigma, l_s, c, xi1)

    Rq = np.zeros((m, n3))
    xi2 = np.zeros(m)
    for r in range(nl):
        for p in range(n3):
            Rq[r, p] = A[r, p]
    for k in range(nb):
        r = nl + k
        i3 = 3 * bi[k]
        j3 = 3 * bj[k]
        acc = 0.0
        for a in range(3):
            b = q[j3 + a] - q[i3 + a]
            bd = qd[j3 + a] - qd[i3 + a]
            Rq[r, j3 + a] = 2.0 * b
            Rq[r, i3 + a] = -2.0 * b
            acc += bd * bd
        xi2[r] = 2.0 * acc

    H = M_inv @ np.ascontiguousarray(Rq.T)
    S = Rq @ H
    y = M_inv @ xi1
    mu, rcond = _cholesky_solve(S, xi2 + Rq @ y)
    qdd = y - H @ mu
    return qdd, -mu, power, rcond


def _rigid_accel_vec(q, qd, f_ext, M_inv, G, A, C_b, C_s, sigma, l_s, c):
    F, damp_power = _string_forces_vec(q, qd, C_s, sigma, l_s, c)
    xi1 = G + f_ext + F
    power = float(f_ext @ qd) + damp_power

    N = q.reshape(-1, 3)
    B = C_b @ N
    Bd = C_b @ qd.reshape(-1, 3)
    bar_rows = 2.0 * (C_b[:, :, None] * B[:, None, :]).reshape(C_b.shape[0], -1)
    Rq = np.vstack([A, bar_rows])
    xi2 = np.concatenate([np.zeros(A.shape[0]), 2.0 * np.einsum("ka,ka->k", Bd, Bd)])

    H = M_inv @ Rq.T
    S = Rq @ H
    y = M_inv @ xi1
    try:
        fac = cho_factor(S, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        nan = np.full(S.shape[0], np.nan)
        return np.full(q.shape[0], np.nan), nan, power, 0.0
    d = np.diag(fac[0])
    rcond = (d.min() / d.max()) ** 2 if np.all(d > 0) else 0.0
    mu = cho_solve(fac, xi2 + Rq @ y, check_finite=False)
    return y - H @ mu, -mu, power, rcond


# --------------------------------------------------------------------------
# compressible bars


@njit
def _compressible_loop(q, qd, f_ext, M_const, G, A, bi, bj, si, sj, sigma, l_s, c,
                       psi, bar_mass, r0, l0, nu, full_el):
    n3 = q.shape[0]
    nl = A.shape[0]

    xi = G + f_ext
    power = 0.0
    for p in range(n3):
        power += f_ext[p] * qd[p]
    power += _add_string_forces(q, qd, si, sj, sigma, l_s, c, xi)

    Mqq = M_const.copy()
    b = np.empty(3)
    bd = np.empty(3)
    for k in range(bi.shape[0]):
        i3 = 3 * bi[k]
        j3 = 3 * bj[k]
        ll = 0.0
        bbd = 0.0
        vv = 0.0
        for a in range(3):
            b[a] = q[j3 + a] - q[i3 + a]
            bd[a] = qd[j3 + a] - qd[i3 + a]
            ll += b[a] * b[a]
            bbd += b[a] * bd[a]
            vv += bd[a] * bd[a]
        L = np.sqrt(ll)
        Ld = bbd / L
        r = r0[k] * (l0[k] / L) ** nu[k]
        m = bar_mass[k]
        inertia = m / 12.0 * (3.0 * r * r + ll)
        dI_dl = m / 12.0 * (-6.0 * nu[k] * r * r / L + 2.0 * L)
        Idot = dI_dl * Ld
        a_ = inertia / ll
        da = dI_dl / ll - 2.0 * inertia / (ll * L)

        # coefficients multiplying w = X^T X q and u = X^T X qdot
        cw = (Idot * Ld / L**3 - 3.0 * inertia * Ld * Ld / ll**2
              + inertia / L**3 * (vv / L - Ld * Ld / L)) - psi[k]
        cu = -(Idot / ll - 3.0 * inertia * Ld / L**3)
        if full_el:
            cw += 0.5 * da * (vv - Ld * Ld) / L + a_ * Ld * Ld / ll
            cu -= a_ * Ld / L
        for e in range(3):
            val = cw * b[e] + cu * bd[e]
            xi[j3 + e] += val
            xi[i3 + e] -= val

        proj = inertia / (ll * ll)
        for e in range(3):
            for f in range(3):
                blk = -proj * b[e] * b[f]
                if e == f:
                    blk += a_
                Mqq[i3 + e, i3 + f] += blk
                Mqq[j3 + e, j3 + f] += blk
                Mqq[i3 + e, j3 + f] -= blk
                Mqq[j3 + e, i3 + f] -= blk

    size = n3 + nl
    K = np.zeros((size, size))
    rhs = np.zeros(size)
    for p in range(n3):
        rhs[p] = xi[p]
        for s in range(n3):
            K[p, s] = Mqq[p, s]
    for r in range(nl):
        for p in range(n3):
            K[p, n3 + r] = -A[r, p]
            K[n3 + r, p] = -A[r, p]
    sol = np.linalg.solve(K, rhs)
    return sol[:n3], sol[n3:], power


def _compressible_vec(q, qd, f_ext, M_const, G, A, C_b, C_s, sigma, l_s, c,
                      psi, bar_mass, r0, l0, nu, full_el):
    F, damp_power = _string_forces_vec(q, qd, C_s, sigma, l_s, c)
    xi = G + f_ext + F
    power = float(f_ext @ qd) + damp_power

    B = C_b @ q.reshape(-1, 3)
    Bd = C_b @ qd.reshape(-1, 3)
    ll = np.einsum("ka,ka->k", B, B)
    L = np.sqrt(ll)
    Ld = np.einsum("ka,ka->k", B, Bd) / L
    vv = np.einsum("ka,ka->k", Bd, Bd)
    r = r0 * (l0 / L) ** nu
    inertia = bar_mass / 12.0 * (3.0 * r * r + ll)
    dI_dl = bar_mass / 12.0 * (-6.0 * nu * r * r / L + 2.0 * L)
    Idot = dI_dl * Ld
    a_ = inertia / ll
    da = dI_dl / ll - 2.0 * inertia / (ll * L)

    cw = (Idot * Ld / L**3 - 3.0 * inertia * Ld**2 / ll**2
          + inertia / L**3 * (vv / L - Ld**2 / L)) - psi
    cu = -(Idot / ll - 3.0 * inertia * Ld / L**3)
    if full_el:
        cw = cw + 0.5 * da * (vv - Ld**2) / L + a_ * Ld**2 / ll
        cu = cu - a_ * Ld / L
    xi = xi + (C_b.T @ (cw[:, None] * B + cu[:, None] * Bd)).ravel()

    # X_k^T X_k = (c_k c_k^T) kron I3 and the rank-one axial term kron b b^T
    CC = np.einsum("ki,kj->kij", C_b, C_b)
    n = C_b.shape[1]
    blocks = a_[:, None, None] * np.eye(3) - (inertia / ll**2)[:, None, None] * np.einsum(
        "ka,kb->kab", B, B)
    Mqq = M_const + np.einsum("kij,kab->iajb", CC, blocks).reshape(3 * n, 3 * n)

    nl = A.shape[0]
    K = np.block([[Mqq, -A.T], [-A, np.zeros((nl, nl))]])
    sol = np.linalg.solve(K, np.concatenate([xi, np.zeros(nl)]))
    return sol[: 3 * n], sol[3 * n:], power


# --------------------------------------------------------------------------
# dispatch


class KernelSet:
    """Backend-specific entry points bound to one model's member arrays."""

    def __init__(self, model, use_numba=None):
        self.use_numba = NUMBA_AVAILABLE if use_numba is None else bool(use_numba)
        if self.use_numba and not NUMBA_AVAILABLE:
            raise RuntimeError("numba backend requested but not available")
        st = model.structure
        self.bi = np.ascontiguousarray(model.bar_nodes[:, 0])
        self.bj = np.ascontiguousarray(model.bar_nodes[:, 1])
        self.si = np.ascontiguousarray(model.string_nodes[:, 0])
        self.sj = np.ascontiguousarray(model.string_nodes[:, 1])
        self.C_b = np.ascontiguousarray(st.bar_connectivity)
        self.C_s = np.ascontiguousarray(st.string_connectivity)
        self.K = np.ascontiguousarray(st.string_stiffness)
        self.l_s = np.ascontiguousarray(st.string_rest_lengths)
        self.c = float(st.damping_coefficient)
        self.M_inv = np.ascontiguousarray(model.M_inv)
        self.G = np.ascontiguousarray(model.G)
        self.A = np.ascontiguousarray(model.A)

    @property
    def name(self):
        return "numba" if self.use_numba else "numpy"

    def _check(self, *vectors):
        # the compiled loops do not bounds-check
        n3 = self.G.shape[0]
        for v in vectors:
            if v.shape != (n3,):
                raise ValueError(f"expected a vector of length {n3}, got shape {v.shape}")

    def string_state(self, q):
        self._check(q)
        if self.use_numba:
            return _string_state_loop(q, self.si, self.sj, self.K, self.l_s)
        return _string_state_vec(q, self.C_s, self.K, self.l_s)

    def bar_psi(self, q, K_b, l0):
        """Bar lengths and elastic force densities K_b (1 - l0/l)."""
        self._check(q)
        if self.use_numba:
            return _bar_psi_loop(q, self.bi, self.bj, K_b, l0)
        return _bar_psi_vec(q, self.C_b, K_b, l0)

    def damper(self, q, qd):
        self._check(q, qd)
        if self.use_numba:
            return _damper_loop(q, qd, self.si, self.sj, self.l_s, self.c)
        F, _ = _string_forces_vec(q, qd, self.C_s, np.zeros(self.si.shape[0]), self.l_s, self.c)
        return F

    def rigid_accel(self, q, qd, f_ext, sigma):
        """Return ``(qddot, lambda, power, rcond)``."""
        self._check(q, qd, f_ext)
        if sigma.shape != self.l_s.shape:
            raise ValueError(f"sigma needs {self.l_s.shape[0]} entries")
        if self.use_numba:
            return _rigid_accel_loop(q, qd, f_ext, self.M_inv, self.G, self.A, self.bi,
                                     self.bj, self.si, self.sj, sigma, self.l_s, self.c)
        return _rigid_accel_vec(q, qd, f_ext, self.M_inv, self.G, self.A, self.C_b,
                                self.C_s, sigma, self.l_s, self.c)

    def compressible_accel(self, q, qd, f_ext, sigma, psi, M_const, bar_mass, r0, l0, nu,
                           full_el=True):
        """Return ``(qddot, lambda, power)`` for the axially elastic model."""
        self._check(q, qd, f_ext)
        if sigma.shape != self.l_s.shape or psi.shape != self.bi.shape:
            raise ValueError("sigma/psi have the wrong number of entries")
        if self.use_numba:
            return _compressible_loop(q, qd, f_ext, M_const, self.G, self.A, self.bi,
                                      self.bj, self.si, self.sj, sigma, self.l_s, self.c,
                                      psi, bar_mass, r0, l0, nu, full_el)
        return _compressible_vec(q, qd, f_ext, M_const, self.G, self.A, self.C_b,
                                 self.C_s, sigma, self.l_s, self.c, psi, bar_mass, r0, l0,
                                 nu, full_el)
