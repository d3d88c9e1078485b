"""YAML structure definition files.

Node ids in files are 1-based; everything returned is 0-based.  Unknown keys
anywhere are an error.  Schema (all lengths in metres, SI units)::

    name: my-structure                 # optional
    nodes:                              # one [x, y, z] row per node
      - [0, 0, 0]
      - [3, 0, 4]
    materials:                          # optional named materials
      wood: {density: 500, youngs_modulus: 1.0e10, poisson_ratio: 0.3}
    bar_defaults: {radius: 0.05, density: 500}       # optional
    bars:                               # [i, j] or a mapping
      - [1, 4]
      - {nodes: [2, 3], radius: 0.05, mass: 19.6}     # mass | density | material
    string_defaults: {stiffness: 100}                 # optional
    strings:                            # [i, j, stiffness, rest_length] or a mapping
      - [1, 3, 100, 3.6]
      - {nodes: [3, 4], youngs_modulus: 2.0e9, radius: 0.001, rest_fraction: 1.0}
    point_masses:
      - {node: 5, mass: 1.0}
    fixed_nodes: [1, 2]
    pinned_coordinates: [[3, y]]        # optional (node, axis) pairs
    damping: 0.0
    gravity: [0, 0, -9.806]
    compressible:                       # optional
      enabled: true
      material: aluminium               # preset or key of ``materials``
      poisson_ratio: 0.33               # optional overrides
      youngs_modulus: 6.8e10

A string's stiffness comes from ``stiffness`` or from ``youngs_modulus`` and
``radius`` (K = E A / l).  Its rest length is ``rest_length``, or
``rest_fraction`` times the initial length (default 1.0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import yaml

from .builtins import axial_stiffness, cylinder_mass
from .compressible import MATERIALS, Material
from .topology import TensegrityStructure

TOP_KEYS = {"name", "nodes", "materials", "bar_defaults", "bars", "string_defaults", "strings",
            "point_masses", "fixed_nodes", "pinned_coordinates", "damping", "gravity",
            "compressible"}
MATERIAL_KEYS = {"density", "youngs_modulus", "poisson_ratio"}
BAR_KEYS = {"nodes", "radius", "density", "mass", "material"}
STRING_KEYS = {"nodes", "stiffness", "rest_length", "rest_fraction", "youngs_modulus", "radius"}
PM_KEYS = {"node", "mass"}
COMP_KEYS = {"enabled", "material", "poisson_ratio", "youngs_modulus", "density"}
AXES = {"x": 0, "y": 1, "z": 2, 0: 0, 1: 1, 2: 2}


class StructureFileError(ValueError):
    pass


@dataclass
class StructureDefinition:
    structure: TensegrityStructure
    compressible: bool = False
    material: Material | None = None


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise StructureFileError(f"{where}: expected a mapping")
    unknown = set(obj) - allowed
    if unknown:
        raise StructureFileError(f"{where}: unknown keys {sorted(unknown)}")


def _node(idx, n, where):
    if not isinstance(idx, int) or isinstance(idx, bool):
        raise StructureFileError(f"{where}: node ids must be integers, got {idx!r}")
    if not 1 <= idx <= n:
        raise StructureFileError(f"{where}: node id {idx} outside 1..{n}")
    return idx - 1


def _pair(raw, n, where):
    if not isinstance(raw, (list, tuple)) or len(raw) != 2:
        raise StructureFileError(f"{where}: expected a node pair")
    return _node(raw[0], n, where), _node(raw[1], n, where)


def _number(value, where):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise StructureFileError(f"{where}: expected a number, got {value!r}") from None


def parse_structure(doc) -> StructureDefinition:
    """Turn a parsed YAML document into a :class:`StructureDefinition`."""
    _check_keys(doc, TOP_KEYS, "structure file")
    if "nodes" not in doc:
        raise StructureFileError("structure file: 'nodes' is required")
    nodes = np.array(doc["nodes"], dtype=float)
    if nodes.ndim != 2 or nodes.shape[1] != 3:
        raise StructureFileError("nodes: every row needs exactly three coordinates")
    n = nodes.shape[0]

    materials = dict(MATERIALS)
    for name, spec in (doc.get("materials") or {}).items():
        _check_keys(spec, MATERIAL_KEYS, f"materials.{name}")
        materials[name] = Material(name, _number(spec.get("density", 0.0), name),
                                   _number(spec.get("youngs_modulus", 0.0), name),
                                   _number(spec.get("poisson_ratio", 0.0), name))

    bar_def = doc.get("bar_defaults") or {}
    _check_keys(bar_def, BAR_KEYS - {"nodes"}, "bar_defaults")
    bars, masses, radii = [], [], []
    for k, raw in enumerate(doc.get("bars") or []):
        where = f"bars[{k}]"
        entry = dict(bar_def)
        if isinstance(raw, dict):
            _check_keys(raw, BAR_KEYS, where)
            entry.update(raw)
            pair = _pair(raw.get("nodes"), n, where)
        else:
            pair = _pair(raw, n, where)
        length = float(np.linalg.norm(nodes[pair[1]] - nodes[pair[0]]))
        if "radius" not in entry:
            raise StructureFileError(f"{where}: radius is required")
        r = _number(entry["radius"], where)
        if "mass" in entry:
            mass = _number(entry["mass"], where)
        else:
            if "density" in entry:
                rho = _number(entry["density"], where)
            elif "material" in entry:
                if entry["material"] not in materials:
                    raise StructureFileError(f"{where}: unknown material {entry['material']!r}")
                rho = materials[entry["material"]].density
            else:
                raise StructureFileError(f"{where}: need mass, density or material")
            mass = cylinder_mass(rho, r, length)
        bars.append(pair)
        masses.append(mass)
        radii.append(r)

    str_def = doc.get("string_defaults") or {}
    _check_keys(str_def, STRING_KEYS - {"nodes"}, "string_defaults")
    strings, stiff, rest = [], [], []
    for k, raw in enumerate(doc.get("strings") or []):
        where = f"strings[{k}]"
        entry = dict(str_def)
        if isinstance(raw, dict):
            _check_keys(raw, STRING_KEYS, where)
            entry.update(raw)
            pair = _pair(raw.get("nodes"), n, where)
        elif isinstance(raw, (list, tuple)) and len(raw) == 4:
            pair = _pair(raw[:2], n, where)
            entry.update(stiffness=raw[2], rest_length=raw[3])
        else:
            pair = _pair(raw, n, where)
        length = float(np.linalg.norm(nodes[pair[1]] - nodes[pair[0]]))
        if "stiffness" in entry:
            K = _number(entry["stiffness"], where)
        elif "youngs_modulus" in entry and "radius" in entry:
            K = float(axial_stiffness(_number(entry["youngs_modulus"], where),
                                      _number(entry["radius"], where), length))
        else:
            raise StructureFileError(f"{where}: need stiffness or youngs_modulus + radius")
        if "rest_length" in entry:
            ls = _number(entry["rest_length"], where)
        else:
            ls = _number(entry.get("rest_fraction", 1.0), where) * length
        strings.append(pair)
        stiff.append(K)
        rest.append(ls)

    pms = {}
    for k, raw in enumerate(doc.get("point_masses") or []):
        where = f"point_masses[{k}]"
        _check_keys(raw, PM_KEYS, where)
        node = _node(raw.get("node"), n, where)
        if node in pms:
            raise StructureFileError(f"{where}: node {node + 1} already has a point mass")
        pms[node] = _number(raw.get("mass"), where)

    fixed = [_node(i, n, "fixed_nodes") for i in doc.get("fixed_nodes") or []]
    pins = []
    for k, raw in enumerate(doc.get("pinned_coordinates") or []):
        where = f"pinned_coordinates[{k}]"
        if not isinstance(raw, (list, tuple)) or len(raw) != 2 or raw[1] not in AXES:
            raise StructureFileError(f"{where}: expected [node, axis]")
        pins.append((_node(raw[0], n, where), AXES[raw[1]]))

    gravity = doc.get("gravity", [0.0, 0.0, 0.0])
    if not isinstance(gravity, (list, tuple)) or len(gravity) != 3:
        raise StructureFileError("gravity: expected three components")

    structure = TensegrityStructure.from_members(
        nodes, bars, strings, bar_masses=masses, bar_radii=radii, string_stiffness=stiff,
        string_rest_lengths=rest, point_masses=pms,
        damping_coefficient=_number(doc.get("damping", 0.0), "damping"),
        fixed_nodes=fixed, gravity=[_number(g, "gravity") for g in gravity],
        pinned_coordinates=pins, name=str(doc.get("name", "structure")))

    comp = doc.get("compressible")
    if comp is None:
        return StructureDefinition(structure)
    _check_keys(comp, COMP_KEYS, "compressible")
    mat_name = comp.get("material", "aluminium")
    if mat_name not in materials:
        raise StructureFileError(f"compressible: unknown material {mat_name!r}")
    base = materials[mat_name]
    material = Material(
        base.name,
        _number(comp.get("density", base.density), "compressible.density"),
        _number(comp.get("youngs_modulus", base.youngs_modulus), "compressible.youngs_modulus"),
        _number(comp.get("poisson_ratio", base.poisson_ratio), "compressible.poisson_ratio"))
    return StructureDefinition(structure, bool(comp.get("enabled", True)), material)


def load_structure(path) -> StructureDefinition:
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise StructureFileError(f"{path}: {exc}") from None
    return parse_structure(doc)


def structure_to_dict(structure: TensegrityStructure):
    """Inverse of :func:`parse_structure` for the rigid part (1-based ids)."""
    from .topology import _member_pairs

    bars = _member_pairs(structure.bar_connectivity, "bar") + 1
    strings = _member_pairs(structure.string_connectivity, "string") + 1
    pm_nodes = [int(np.flatnonzero(r)[0]) + 1 for r in structure.point_mass_locations]
    return {
        "name": structure.name,
        "nodes": structure.nodes.tolist(),
        "bars": [{"nodes": [int(i), int(j)], "radius": float(r), "mass": float(m)}
                 for (i, j), r, m in zip(bars, structure.bar_radii, structure.bar_masses)],
        "strings": [[int(i), int(j), float(K), float(ls)] for (i, j), K, ls in
                    zip(strings, structure.string_stiffness, structure.string_rest_lengths)],
        "point_masses": [{"node": p, "mass": float(m)}
                         for p, m in zip(pm_nodes, structure.point_masses)],
        "fixed_nodes": [p + 1 for p in structure.fixed_node_indices],
        "pinned_coordinates": [[p + 1, "xyz"[a]] for p, a in structure.pinned_coordinates],
        "damping": structure.damping_coefficient,
        "gravity": structure.gravity.tolist(),
    }


def dump_structure(structure: TensegrityStructure, path):
    with open(path, "w") as fh:
        yaml.safe_dump(structure_to_dict(structure), fh, sort_keys=False)
