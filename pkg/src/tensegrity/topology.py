"""Structure description, connectivity validation and selector matrices.

Nodes are 0-based everywhere in this package.  Only the structure-file reader
(:mod:`tensegrity.structure_file`) and the CLI speak 1-based node ids.

Coordinates are the column-stacked nodal matrix, ``q = vec(N)``, so node ``p``
occupies ``q[3p:3p+3]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class StructureError(ValueError):
    """Raised for malformed structure descriptions."""


@dataclass(frozen=True, eq=False)
class TensegrityStructure:
    """Topology and material description of a tensegrity system.

    Attributes:
        nodes: (n, 3) initial nodal positions [m].
        bar_connectivity: (n_b, n) matrix with one -1 and one +1 per row.
        string_connectivity: (n_s, n) matrix with one -1 and one +1 per row.
        point_mass_locations: (n_pm, n) binary matrix, one 1 per row.
        bar_masses: (n_b,) [kg].
        bar_radii: (n_b,) [m].
        point_masses: (n_pm,) [kg].
        string_stiffness: (n_s,) [N/m].
        string_rest_lengths: (n_s,) [m].
        damping_coefficient: string damper constant c [N s/m].
        fixed_node_indices: nodes pinned at their initial position.
        gravity: (3,) [m/s^2].
        pinned_coordinates: extra (node, axis) pairs held at their initial
            value, e.g. to keep a planar model in its plane.
    """

    nodes: np.ndarray
    bar_connectivity: np.ndarray
    string_connectivity: np.ndarray
    point_mass_locations: np.ndarray
    bar_masses: np.ndarray
    bar_radii: np.ndarray
    point_masses: np.ndarray
    string_stiffness: np.ndarray
    string_rest_lengths: np.ndarray
    damping_coefficient: float = 0.0
    fixed_node_indices: tuple = ()
    gravity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    pinned_coordinates: tuple = ()
    name: str = "structure"

    def __post_init__(self):
        conv = object.__setattr__
        conv(self, "nodes", np.atleast_2d(np.asarray(self.nodes, dtype=float)))
        n = self.nodes.shape[0]
        for attr in ("bar_connectivity", "string_connectivity", "point_mass_locations"):
            mat = np.asarray(getattr(self, attr), dtype=float)
            if mat.size == 0:
                mat = np.zeros((0, n))
            conv(self, attr, np.atleast_2d(mat))
        for attr in ("bar_masses", "bar_radii", "point_masses",
                     "string_stiffness", "string_rest_lengths"):
            conv(self, attr, np.atleast_1d(np.asarray(getattr(self, attr), dtype=float)).ravel())
        conv(self, "gravity", np.asarray(self.gravity, dtype=float).reshape(3))
        conv(self, "fixed_node_indices", tuple(int(i) for i in self.fixed_node_indices))
        conv(self, "pinned_coordinates",
             tuple((int(p), int(a)) for p, a in self.pinned_coordinates))
        conv(self, "damping_coefficient", float(self.damping_coefficient))

    # -- convenience constructors -------------------------------------------------

    @classmethod
    def from_members(cls, nodes, bars=(), strings=(), *, bar_masses=(), bar_radii=(),
                     string_stiffness=(), string_rest_lengths=None, point_masses=None,
                     damping_coefficient=0.0, fixed_nodes=(), gravity=(0.0, 0.0, 0.0),
                     pinned_coordinates=(), name="structure"):
        """Build from 0-based node pairs instead of connectivity matrices.

        ``point_masses`` maps node index to mass.  Missing string rest lengths
        default to the initial string lengths (no pre-stress).
        """
        nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        n = nodes.shape[0]
        C_b = _connectivity(bars, n)
        C_s = _connectivity(strings, n)
        point_masses = dict(point_masses or {})
        L_pm = np.zeros((len(point_masses), n))
        for row, node in enumerate(point_masses):
            L_pm[row, node] = 1.0
        if string_rest_lengths is None:
            string_rest_lengths = np.linalg.norm(C_s @ nodes, axis=1)
        return cls(
            nodes=nodes,
            bar_connectivity=C_b,
            string_connectivity=C_s,
            point_mass_locations=L_pm,
            bar_masses=_broadcast(bar_masses, len(bars)),
            bar_radii=_broadcast(bar_radii, len(bars)),
            point_masses=np.array(list(point_masses.values()), dtype=float),
            string_stiffness=_broadcast(string_stiffness, len(strings)),
            string_rest_lengths=_broadcast(string_rest_lengths, len(strings)),
            damping_coefficient=damping_coefficient,
            fixed_node_indices=tuple(fixed_nodes),
            gravity=gravity,
            pinned_coordinates=tuple(pinned_coordinates),
            name=name,
        )

    def replace(self, **changes):
        """Copy with some fields replaced (arrays are not copied)."""
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return type(self)(**fields)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_bars(self):
        return self.bar_connectivity.shape[0]

    @property
    def n_strings(self):
        return self.string_connectivity.shape[0]

    @property
    def n_point_masses(self):
        return self.point_mass_locations.shape[0]


def _broadcast(values, count):
    arr = np.atleast_1d(np.asarray(values, dtype=float)).ravel()
    if arr.size == 1 and count != 1:
        arr = np.full(count, arr[0])
    return arr


def _connectivity(pairs, n):
    C = np.zeros((len(pairs), n))
    for k, (i, j) in enumerate(pairs):
        C[k, i] = -1.0
        C[k, j] = 1.0
    return C


@dataclass(frozen=True, eq=False)
class SelectorSet:
    """Dense per-member selector matrices.

    ``X[k]`` maps ``q`` to bar vector ``b_k``, ``Xbar[k]`` to the bar centre,
    ``Y[k]`` to string vector ``s_k`` and ``P[k]`` to point mass position
    ``p_k``.  All are stacked along axis 0, each of shape (3, 3n).
    """

    X: np.ndarray
    Xbar: np.ndarray
    Y: np.ndarray
    P: np.ndarray

    @cached_property
    def XtX(self):
        return np.einsum("kai,kaj->kij", self.X, self.X)

    @cached_property
    def YtY(self):
        return np.einsum("kai,kaj->kij", self.Y, self.Y)


def selector_matrices(structure: TensegrityStructure) -> SelectorSet:
    I3 = np.eye(3)
    C_b = structure.bar_connectivity
    C_s = structure.string_connectivity
    L_pm = structure.point_mass_locations

    def stack(rows):
        n3 = 3 * structure.n_nodes
        if len(rows) == 0:
            return np.zeros((0, 3, n3))
        return np.stack([np.kron(row[None, :], I3) for row in rows])

    return SelectorSet(
        X=stack(C_b),
        Xbar=stack(0.5 * np.abs(C_b)),
        Y=stack(C_s),
        P=stack(L_pm),
    )


@dataclass(frozen=True, eq=False)
class AssembledModel:
    """Immutable, validated model with everything the rigid dynamics needs.

    ``bar_nodes[k] = (i, j)`` means ``b_k = n_j - n_i``; likewise for strings.
    ``A q = b`` encodes fixed nodes and pinned coordinates.
    """

    structure: TensegrityStructure
    selectors: SelectorSet
    q0: np.ndarray
    bar_lengths: np.ndarray
    bar_inertia: np.ndarray
    A: np.ndarray
    b: np.ndarray
    bar_nodes: np.ndarray
    string_nodes: np.ndarray
    point_mass_nodes: np.ndarray
    M: np.ndarray
    M_inv: np.ndarray
    G: np.ndarray

    @property
    def n(self):
        return self.structure.n_nodes

    @property
    def n_bars(self):
        return self.structure.n_bars

    @property
    def n_strings(self):
        return self.structure.n_strings

    @property
    def n_linear(self):
        return self.A.shape[0]

    @property
    def n_constraints(self):
        return self.A.shape[0] + self.n_bars

    @property
    def string_stiffness(self):
        return self.structure.string_stiffness

    @property
    def string_rest_lengths(self):
        return self.structure.string_rest_lengths

    @property
    def damping(self):
        return self.structure.damping_coefficient

    def node_positions(self, q):
        return np.asarray(q).reshape(-1, 3)

    @cached_property
    def kernels(self):
        """Kernel set for the active backend (see :mod:`tensegrity._jit`)."""
        from .kernels import KernelSet

        return KernelSet(self)


def _member_pairs(C, what):
    pairs = np.zeros((C.shape[0], 2), dtype=np.int64)
    for k, row in enumerate(C):
        neg = np.flatnonzero(row == -1)
        pos = np.flatnonzero(row == 1)
        if len(neg) != 1 or len(pos) != 1 or np.count_nonzero(row) != 2:
            raise StructureError(f"{what} row {k} must hold exactly one -1 and one +1")
        pairs[k] = (neg[0], pos[0])
    return pairs


def validate(structure: TensegrityStructure):
    """Check the connectivity and material invariants; raise StructureError."""
    n = structure.n_nodes
    if structure.nodes.shape != (n, 3) or not np.all(np.isfinite(structure.nodes)):
        raise StructureError("nodes must be a finite (n, 3) array")
    for attr in ("bar_connectivity", "string_connectivity", "point_mass_locations"):
        mat = getattr(structure, attr)
        if mat.shape[1] != n:
            raise StructureError(f"{attr} must have {n} columns, got {mat.shape[1]}")

    bar_pairs = _member_pairs(structure.bar_connectivity, "bar")
    string_pairs = _member_pairs(structure.string_connectivity, "string")

    seen = set()
    for k, (i, j) in enumerate(bar_pairs):
        key = frozenset((int(i), int(j)))
        if key in seen:
            raise StructureError(f"bar {k} duplicates node pair ({i}, {j})")
        seen.add(key)

    L_pm = structure.point_mass_locations
    barred = set(bar_pairs.ravel().tolist())
    for k, row in enumerate(L_pm):
        ones = np.flatnonzero(row == 1)
        if len(ones) != 1 or np.count_nonzero(row) != 1:
            raise StructureError(f"point mass row {k} must hold exactly one 1")
        if int(ones[0]) in barred:
            raise StructureError(f"point mass {k} sits on node {ones[0]}, which carries a bar")

    counts = {
        "bar_masses": structure.n_bars,
        "bar_radii": structure.n_bars,
        "point_masses": structure.n_point_masses,
        "string_stiffness": structure.n_strings,
        "string_rest_lengths": structure.n_strings,
    }
    for attr, count in counts.items():
        values = getattr(structure, attr)
        if values.shape != (count,):
            raise StructureError(f"{attr} needs {count} entries, got {values.shape[0]}")
        if np.any(~np.isfinite(values)) or np.any(values <= 0):
            raise StructureError(f"{attr} must be strictly positive")
    if structure.damping_coefficient < 0:
        raise StructureError("damping coefficient must be non-negative")

    for p in structure.fixed_node_indices:
        if not 0 <= p < n:
            raise StructureError(f"fixed node index {p} out of range [0, {n})")
    for p, axis in structure.pinned_coordinates:
        if not 0 <= p < n or axis not in (0, 1, 2):
            raise StructureError(f"pinned coordinate ({p}, {axis}) out of range")

    N = structure.nodes
    for what, pairs in (("bar", bar_pairs), ("string", string_pairs)):
        for k, (i, j) in enumerate(pairs):
            if np.linalg.norm(N[j] - N[i]) == 0.0:
                raise StructureError(f"{what} {k} has zero initial length")

    massive = barred | {int(np.flatnonzero(row)[0]) for row in L_pm}
    massless = sorted(set(range(n)) - massive)
    if massless:
        raise StructureError(f"nodes {massless} carry no bar and no point mass; M is singular")
    return bar_pairs, string_pairs


def boundary_matrix(structure: TensegrityStructure):
    """Rows of ``A q = b``: three per fixed node, then one per pinned coordinate."""
    n3 = 3 * structure.n_nodes
    rows = []
    for p in structure.fixed_node_indices:
        rows.extend(3 * p + a for a in range(3))
    for p, axis in structure.pinned_coordinates:
        idx = 3 * p + axis
        if idx not in rows:
            rows.append(idx)
    A = np.zeros((len(rows), n3))
    A[np.arange(len(rows)), rows] = 1.0
    q0 = structure.nodes.reshape(-1)
    return A, A @ q0


def bar_inertia(mass, radius, length):
    """Transverse moment of inertia of a solid cylinder about its centre."""
    return mass / 12.0 * (3.0 * radius**2 + length**2)


def build_structure(structure: TensegrityStructure) -> AssembledModel:
    """Validate ``structure`` and precompute selectors, M, G and A q = b."""
    bar_pairs, string_pairs = validate(structure)
    sel = selector_matrices(structure)
    q0 = structure.nodes.reshape(-1).copy()
    n3 = q0.size

    lengths = np.array([np.linalg.norm(Xk @ q0) for Xk in sel.X])
    inertia = bar_inertia(structure.bar_masses, structure.bar_radii, lengths)

    M = np.zeros((n3, n3))
    for k in range(structure.n_bars):
        M += structure.bar_masses[k] * sel.Xbar[k].T @ sel.Xbar[k]
        M += inertia[k] / lengths[k] ** 2 * sel.X[k].T @ sel.X[k]
    for k in range(structure.n_point_masses):
        M += structure.point_masses[k] * sel.P[k].T @ sel.P[k]
    M = 0.5 * (M + M.T)
    M_inv = np.linalg.inv(M)
    M_inv = 0.5 * (M_inv + M_inv.T)

    g = structure.gravity
    G = np.zeros(n3)
    for k in range(structure.n_bars):
        G += structure.bar_masses[k] * sel.Xbar[k].T @ g
    for k in range(structure.n_point_masses):
        G += structure.point_masses[k] * sel.P[k].T @ g

    A, b = boundary_matrix(structure)
    pm_nodes = np.array([int(np.flatnonzero(row)[0]) for row in structure.point_mass_locations],
                        dtype=np.int64)
    for arr in (q0, lengths, inertia, A, b, M, M_inv, G):
        arr.setflags(write=False)

    return AssembledModel(
        structure=structure,
        selectors=sel,
        q0=q0,
        bar_lengths=lengths,
        bar_inertia=inertia,
        A=A,
        b=b,
        bar_nodes=bar_pairs,
        string_nodes=string_pairs,
        point_mass_nodes=pm_nodes,
        M=M,
        M_inv=M_inv,
        G=G,
    )


def member_lengths(model: AssembledModel, q):
    """Return ``(bar_lengths, string_lengths)`` at configuration ``q``."""
    N = np.asarray(q, dtype=float).reshape(-1, 3)
    bi, bj = model.bar_nodes.T
    si, sj = model.string_nodes.T
    return (np.linalg.norm(N[bj] - N[bi], axis=1),
            np.linalg.norm(N[sj] - N[si], axis=1))
