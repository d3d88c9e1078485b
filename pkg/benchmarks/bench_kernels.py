"""Time the compiled and numpy kernel paths on the built-in models.

    python benchmarks/bench_kernels.py [--repeat 2000]

Reports microseconds per call of the rigid and compressible accelerations and
the string state kernel, plus a short corrected simulation of each model.
"""

import argparse
import time

import numpy as np

from tensegrity import builtins
from tensegrity._jit import NUMBA_AVAILABLE
from tensegrity.compressible import MATERIALS, CompressibleBarProps, translational_mass
from tensegrity.integrator import simulate
from tensegrity.kernels import KernelSet
from tensegrity.rigid import ForceInputs, RigidDynamics, SystemState
from tensegrity.topology import build_structure


def per_call(fun, repeat):
    fun()
    t0 = time.perf_counter()
    for _ in range(repeat):
        fun()
    return (time.perf_counter() - t0) / repeat * 1e6


def bench_model(name, structure, repeat, backends):
    model = build_structure(structure)
    rng = np.random.default_rng(1)
    q = model.q0
    qd = 1e-3 * rng.standard_normal(q.size)
    f = np.zeros_like(q)
    _, sigma = KernelSet(model, use_numba=False).string_state(q)
    rows = {}
    for use in backends:
        ks = KernelSet(model, use_numba=use)
        label = ks.name
        rows[(label, "string_state")] = per_call(lambda: ks.string_state(q), repeat)
        rows[(label, "rigid_accel")] = per_call(lambda: ks.rigid_accel(q, qd, f, sigma), repeat)
        if name == "tbar":
            props = CompressibleBarProps.from_material(model, MATERIALS["aluminium"])
            M_const = translational_mass(model)
            psi = np.zeros(model.n_bars)
            args = (q, qd, f, sigma, psi, M_const, structure.bar_masses, props.rest_radius,
                    props.rest_length, props.poisson_ratio)
            rows[(label, "compressible_accel")] = per_call(
                lambda: ks.compressible_accel(*args), repeat)
        dyn = RigidDynamics(model, ForceInputs(f_ext=builtins.builtin_forcing(name, structure)),
                            kernels=ks)
        t0 = time.perf_counter()
        traj = simulate(dyn, SystemState.at_rest(model), t_end=0.5)
        rows[(label, "simulate_0.5s_ms")] = (time.perf_counter() - t0) * 1e3
        rows[(label, "steps")] = len(traj) - 1
    return rows


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=2000)
    args = parser.parse_args()
    backends = [False, True] if NUMBA_AVAILABLE else [False]
    print(f"{'model':6s} {'kernel':22s} " + " ".join(f"{b:>10s}" for b in
                                                  ["numpy", "numba"][:len(backends)]))
    for name, make in builtins.BUILTINS.items():
        rows = bench_model(name, make(), args.repeat, backends)
        kernels = sorted({k for _, k in rows}, key=list(dict.fromkeys(k for _, k in rows)).index)
        for k in kernels:
            vals = [rows.get((b, k)) for b in ("numpy", "numba")[:len(backends)]]
            cells = " ".join(f"{v:10.1f}" if isinstance(v, float) else f"{v:10d}" for v in vals)
            speed = ""
            if len(vals) == 2 and isinstance(vals[0], float) and vals[1]:
                speed = f"  x{vals[0] / vals[1]:.1f}"
            print(f"{name:6s} {k:22s} {cells}{speed}")


if __name__ == "__main__":
    main()
