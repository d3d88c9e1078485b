"""Command-line front end.

Runs a built-in model (``tbar``, ``arm``, ``ball``) or a YAML structure file
and writes CSV data files into ``--out``:

``trajectory.csv``
    one row per accepted step: t, q (3n), qdot (3n), W_f
``residuals.csv``
    t, |R|_2, one column per bar length residual |b_k|^2 - l_k^2, energy
    residual E - E0 - W_f, correction iterations
``nodes.csv``
    t and positions of the recorded nodes (1-based labels in the header)
``linear_model.txt``
    with ``--linearize``: A, B blocks and the operating point
``summary.json``
    run statistics

Exit status: 0 success, 2 configuration error, 3 numerical failure (the time
of failure is printed and the last good state written to ``last_state.csv``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import builtins
from .compressible import (MATERIALS, CompressibleBarProps, CompressibleDynamics,
                           NotAtEquilibriumError, linearize_compressible)
from .correction import CorrectionSettings, correct_state
from .integrator import IntegratorSettings, SimulationError, simulate
from .linearization import OperatingPoint, linearize_rigid
from .rigid import ForceInputs, RigidDynamics, SystemState
from .structure_file import StructureFileError, load_structure
from .topology import StructureError, build_structure

log = logging.getLogger("tensegrity")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: str | None = "tbar"
    model_file: str | None = None
    duration: float = 10.0
    rtol: float = 1e-10
    atol: float = 1e-10
    gamma: float = 1e-10
    geometric_correction: bool = True
    energy_correction: bool = True
    compressible: bool = False
    material: str | None = None
    method: str = "dp54"
    step: float | None = None
    linearize: bool = False
    out: str = "out"
    seed: int = 0
    perturb: float = 0.0
    record_nodes: list = field(default_factory=list)

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        if (self.model_file is None) == (self.model is None):
            raise ConfigError("give exactly one of --model or --model-file")
        if self.model is not None and self.model not in builtins.BUILTINS:
            raise ConfigError(f"unknown built-in model {self.model!r}")
        if self.material not in (None, "custom") and self.material not in MATERIALS:
            raise ConfigError(f"unknown material {self.material!r}")
        if self.perturb < 0:
            raise ConfigError("perturb must be non-negative")


def _positive(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def build_parser():
    p = argparse.ArgumentParser(prog="tensegrity",
                                description="Simulate constrained tensegrity dynamics.")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--model", choices=sorted(builtins.BUILTINS), help="built-in model")
    src.add_argument("--model-file", help="YAML structure definition")
    p.add_argument("--duration", type=_positive, default=10.0, help="simulated time, s")
    p.add_argument("--rtol", type=_positive, default=1e-10)
    p.add_argument("--atol", type=_positive, default=1e-10)
    p.add_argument("--gamma", type=_positive, default=1e-10, help="correction threshold")
    p.add_argument("--no-geometric-correction", action="store_true")
    p.add_argument("--no-energy-correction", action="store_true")
    p.add_argument("--compressible", action="store_true", help="axially elastic bars")
    p.add_argument("--material", choices=["hdpe", "aluminium", "aluminum", "custom"],
                   help="bar material for --compressible (custom: from the model file)")
    p.add_argument("--method", choices=["dp54", "trapezoidal"], default=None)
    p.add_argument("--step", type=_positive, help="fixed step for the trapezoidal method")
    p.add_argument("--linearize", action="store_true", help="write linear_model.txt")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="seed for --perturb")
    p.add_argument("--perturb", type=float, default=0.0,
                   help="random initial perturbation amplitude (m and m/s)")
    p.add_argument("--record-nodes", type=int, nargs="*", default=None,
                   help="1-based node ids for nodes.csv")
    p.add_argument("--batch", help="YAML list of run configurations, run on worker threads")
    p.add_argument("--workers", type=int, default=None, help="threads for --batch")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args) -> RunConfig:
    model = args.model
    if model is None and args.model_file is None:
        model = "tbar"
    return RunConfig(
        model=model, model_file=args.model_file, duration=args.duration,
        rtol=args.rtol, atol=args.atol, gamma=args.gamma,
        geometric_correction=not args.no_geometric_correction,
        energy_correction=not args.no_energy_correction,
        compressible=args.compressible, material=args.material,
        method=args.method or ("trapezoidal" if args.compressible else "dp54"),
        step=args.step, linearize=args.linearize, out=args.out, seed=args.seed,
        perturb=args.perturb, record_nodes=args.record_nodes or [])


def config_from_mapping(entry, base_out) -> RunConfig:
    if not isinstance(entry, dict):
        raise ConfigError("batch entries must be mappings")
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(entry) - known - {"name"}
    if unknown:
        raise ConfigError(f"unknown batch keys {sorted(unknown)}")
    values = {k: v for k, v in entry.items() if k != "name"}
    if "model_file" in values and "model" not in values:
        values["model"] = None
    name = entry.get("name") or values.get("model") or Path(values["model_file"]).stem
    values.setdefault("out", str(Path(base_out) / str(name)))
    return RunConfig(**values)


# --------------------------------------------------------------------------


@dataclass
class Prepared:
    config: RunConfig
    model: object
    dynamics: object
    forcing: object
    record: list


def _material(config, definition):
    name = config.material
    if name == "custom":
        if definition is None or definition.material is None:
            raise ConfigError("--material custom needs a compressible block in the model file")
        return definition.material
    if name is None:
        if definition is not None and definition.material is not None:
            return definition.material
        name = "aluminium"
    return MATERIALS[name]


def prepare(config: RunConfig) -> Prepared:
    """Build the model and dynamics for a run (raises ConfigError/StructureError)."""
    definition = None
    if config.model_file:
        definition = load_structure(config.model_file)
        structure = definition.structure
        compressible = config.compressible or definition.compressible
        record = []
    else:
        structure = builtins.BUILTINS[config.model]()
        compressible = config.compressible
        record = list(builtins.RECORD_NODES.get(config.model, ()))
    if config.record_nodes:
        record = [p - 1 for p in config.record_nodes]
    for p in record:
        if not 0 <= p < structure.n_nodes:
            raise ConfigError(f"record node {p + 1} outside 1..{structure.n_nodes}")

    material = None
    if compressible:
        material = _material(config, definition)
        lengths = np.linalg.norm(
            structure.bar_connectivity @ structure.nodes, axis=1)
        structure = structure.replace(bar_masses=builtins.cylinder_mass(
            material.density, structure.bar_radii, lengths))
    model = build_structure(structure)
    forcing = builtins.builtin_forcing(config.model, structure) if config.model else None
    inputs = ForceInputs(f_ext=forcing)
    if compressible:
        props = CompressibleBarProps.from_material(model, material)
        dyn = CompressibleDynamics(model, props, inputs)
    else:
        dyn = RigidDynamics(model, inputs)
    return Prepared(config, model, dyn, forcing, record)


def initial_state(prep: Prepared) -> SystemState:
    model = prep.model
    state = SystemState.at_rest(model)
    if prep.config.perturb > 0:
        rng = np.random.default_rng(prep.config.seed)
        n3 = 3 * model.n
        free = np.ones(n3)
        if model.n_linear:
            free[np.flatnonzero(np.any(model.A != 0, axis=0))] = 0.0
        eps = prep.config.perturb
        q = state.q + eps * free * rng.uniform(-1, 1, n3)
        qd = eps * free * rng.uniform(-1, 1, n3)
        state = SystemState(q, qd, 0.0, 0.0)
        # project back onto the constraint manifold; the energy target is free
        settings = CorrectionSettings(gamma=1e-12, energy_correction_enabled=False)
        state, _ = correct_state(prep.dynamics, state, 0.0, settings)
    return state


def integrator_settings(config: RunConfig, dyn) -> IntegratorSettings:
    corr = CorrectionSettings(gamma=config.gamma,
                              energy_correction_enabled=config.energy_correction,
                              geometric_correction_enabled=config.geometric_correction)
    return IntegratorSettings(rel_tol=config.rtol, abs_tol=config.atol, method=config.method,
                              correction=corr, h_fixed=config.step)


def _write_csv(path, header, rows):
    np.savetxt(path, rows, fmt="%.17g", delimiter=",", header=header, comments="# ")


def write_outputs(out: Path, prep: Prepared, traj, elapsed):
    model = prep.model
    n3 = 3 * model.n
    xyz = [f"{a}{p + 1}" for p in range(model.n) for a in "xyz"]
    cols = ["t_s"] + [f"q_{c}_m" for c in xyz] + [f"qdot_{c}_m_per_s" for c in xyz] + ["W_f_J"]
    _write_csv(out / "trajectory.csv",
               "trajectory: one row per accepted step\n" + ",".join(cols),
               np.column_stack([traj.t, traj.y]))
    nb = traj.bar_length_error.shape[1]
    cols = (["t_s", "constraint_norm"] + [f"bar{k + 1}_length_error_m2" for k in range(nb)]
            + ["energy_residual_J", "correction_iterations"])
    _write_csv(out / "residuals.csv",
               "residuals after correction\n" + ",".join(cols),
               np.column_stack([traj.t, traj.constraint_norm, traj.bar_length_error,
                                traj.energy_residual, traj.correction_iterations]))
    if prep.record:
        cols = ["t_s"] + [f"node{p + 1}_{a}_m" for p in prep.record for a in "xyz"]
        _write_csv(out / "nodes.csv", "recorded node positions\n" + ",".join(cols),
                   np.column_stack([traj.t] + [traj.node(p) for p in prep.record]))
    summary = {
        "model": prep.config.model or prep.config.model_file,
        "compressible": bool(getattr(prep.dynamics, "compressible", False)),
        "n_nodes": model.n, "n_bars": model.n_bars, "n_strings": model.n_strings,
        "steps": int(len(traj) - 1), "rhs_evaluations": int(traj.n_rhs),
        "rejected_steps": int(traj.n_rejected),
        "correction_iterations": int(traj.correction_iterations.sum()),
        "max_constraint_norm": float(traj.constraint_norm.max()),
        "max_bar_length_error": float(np.abs(traj.bar_length_error).max()) if nb else 0.0,
        "max_energy_residual": float(np.abs(traj.energy_residual).max()),
        "E0": traj.E0, "wall_time_s": elapsed, "state_size": 2 * n3 + 1,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def write_linearization(out: Path, prep: Prepared):
    model = prep.model
    dyn = prep.dynamics
    q = model.q0
    if getattr(dyn, "compressible", False):
        op = OperatingPoint.static(model, q, dyn.sigma(q))
        lin = linearize_compressible(dyn, op)
    else:
        op = OperatingPoint.static(model, q, dyn.sigma(q))
        lin = linearize_rigid(model, op, passive=True)
    lin.save(out / "linear_model.txt")


def run(config: RunConfig) -> int:
    """Execute one configuration; returns the process exit status."""
    out = Path(config.out)
    try:
        prep = prepare(config)
        settings = integrator_settings(config, prep.dynamics)
        out.mkdir(parents=True, exist_ok=True)
        state0 = initial_state(prep)
    except (ConfigError, StructureFileError, StructureError, ValueError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if config.linearize:
        try:
            write_linearization(out, prep)
        except NotAtEquilibriumError as exc:
            print(f"linearization failed: {exc}", file=sys.stderr)
            return EXIT_NUMERIC

    t0 = time.perf_counter()
    try:
        traj = simulate(prep.dynamics, state0, settings=settings, t_end=config.duration)
    except SimulationError as exc:
        print(f"numerical failure at t = {exc.t}: {exc}", file=sys.stderr)
        if exc.last_state is not None:
            s = exc.last_state
            _write_csv(out / "last_state.csv", "last good state\nt,q...,qdot...,W_f",
                       np.concatenate([[s.t], s.as_vector()])[None, :])
        return EXIT_NUMERIC
    elapsed = time.perf_counter() - t0
    summary = write_outputs(out, prep, traj, elapsed)
    log.info("%s: %d steps in %.2f s, max |R| %.3g, max energy residual %.3g",
             summary["model"], summary["steps"], elapsed, summary["max_constraint_norm"],
             summary["max_energy_residual"])
    return EXIT_OK


def run_batch(path, base_out, workers=None) -> int:
    try:
        with open(path) as fh:
            entries = yaml.safe_load(fh)
        if not isinstance(entries, list):
            raise ConfigError("batch file must hold a list of configurations")
        configs = [config_from_mapping(e, base_out) for e in entries]
    except (ConfigError, OSError, TypeError, yaml.YAMLError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    with ThreadPoolExecutor(max_workers=workers) as pool:
        codes = list(pool.map(run, configs))
    return max(codes) if codes else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    if args.batch:
        return run_batch(args.batch, args.out, args.workers)
    try:
        config = config_from_args(args)
    except ConfigError as exc:
        parser.error(str(exc))
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
