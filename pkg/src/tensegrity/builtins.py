"""Built-in structures: T-bar, planar arm, six-bar ball, pendulum.

The arm and ball geometries are reconstructions (see README): the arm is a
ladder of six 1 m square cells cantilevered from its left column, and the
ball is the classic six-bar expanded octahedron with a payload point mass at
its centre.  Both are pre-stressed by :func:`tensegrity.linearization.prestress`
so that the initial configuration is a static equilibrium under gravity.
"""

from __future__ import annotations

import numpy as np

from .linearization import find_equilibrium, prestress, rest_lengths_for
from .topology import TensegrityStructure, build_structure

GRAVITY = (0.0, 0.0, -9.806)
NYLON_E = 2.0e9
NYLON_RADIUS = 0.001


def cylinder_mass(density, radius, length):
    return density * np.pi * radius**2 * length


def axial_stiffness(youngs_modulus, radius, length):
    """K = E A / l for a solid circular cross-section."""
    return youngs_modulus * np.pi * np.asarray(radius) ** 2 / np.asarray(length)


def _lengths(nodes, pairs):
    nodes = np.asarray(nodes, dtype=float)
    return np.array([np.linalg.norm(nodes[j] - nodes[i]) for i, j in pairs])


def _with_prestress(structure, sigma_min, f0=None):
    model = build_structure(structure)
    sigma, _ = prestress(model, sigma_min=sigma_min, f0=f0)
    return structure.replace(string_rest_lengths=rest_lengths_for(model, sigma))


def _settle(structure, gravity=GRAVITY):
    """Apply ``gravity`` and move the nodes to the resulting static equilibrium."""
    loaded = structure.replace(gravity=np.asarray(gravity, dtype=float))
    q = find_equilibrium(build_structure(loaded), tol=1e-10, max_iter=100)
    return loaded.replace(nodes=q.reshape(-1, 3))


def builtin_tbar(density=500.0, radius=0.05, stiffness=100.0, prestress_fraction=0.9,
                 damping=0.0, gravity=(0.0, 0.0, 0.0)):
    """Two crossing 5 m bars in the x-z plane with the bottom nodes fixed.

    Nodes (0-based): 0 (0,0,0), 1 (3,0,0), 2 (0,0,4), 3 (3,0,4).  Bars 0-3 and
    1-2; springs 0-2 and 1-3 (vertical, rest length ``prestress_fraction`` of
    initial), 2-3 (top) and 0-1 (bottom, between the fixed nodes).
    """
    nodes = [[0, 0, 0], [3, 0, 0], [0, 0, 4], [3, 0, 4]]
    bars = [(0, 3), (1, 2)]
    strings = [(0, 2), (1, 3), (2, 3), (0, 1)]
    bl = _lengths(nodes, bars)
    sl = _lengths(nodes, strings)
    rest = sl * np.array([prestress_fraction, prestress_fraction, 1.0, 1.0])
    return TensegrityStructure.from_members(
        nodes, bars, strings,
        bar_masses=cylinder_mass(density, radius, bl), bar_radii=radius,
        string_stiffness=stiffness, string_rest_lengths=rest,
        damping_coefficient=damping, fixed_nodes=(0, 1), gravity=gravity, name="tbar")


def builtin_tbar_equilibrium(sigma=10.0, **kwargs):
    """T-bar whose vertical and top springs share force density ``sigma``.

    With equal force densities in the two vertical springs and the top spring
    the initial configuration is a static equilibrium.
    """
    st = builtin_tbar(**kwargs)
    model = build_structure(st)
    sig = np.array([sigma, sigma, sigma, 0.0])
    return st.replace(string_rest_lengths=rest_lengths_for(model, sig), name="tbar-eq")


def builtin_arm(cells=6, density=1300.0, radius=0.01, string_modulus=NYLON_E,
                string_radius=NYLON_RADIUS, sigma_min=50.0, damping=0.0, pin_plane=True):
    """Planar cantilever arm: a ladder of ``cells`` unit squares in the x-z plane.

    Column j holds nodes 2j (z = 0) and 2j+1 (z = 1); column 0 is fixed.
    Bars run along both chords and up every free column; each cell carries
    two diagonal strings.  The out-of-plane coordinate of every free node is
    pinned when ``pin_plane`` is set.
    """
    ncol = cells + 1
    nodes = [[float(j), 0.0, float(z)] for j in range(ncol) for z in (0, 1)]
    bars = []
    for j in range(cells):
        bars += [(2 * j, 2 * j + 2), (2 * j + 1, 2 * j + 3)]
    bars += [(2 * j, 2 * j + 1) for j in range(1, ncol)]
    strings = []
    for j in range(cells):
        strings += [(2 * j, 2 * j + 3), (2 * j + 1, 2 * j + 2)]
    bl = _lengths(nodes, bars)
    sl = _lengths(nodes, strings)
    pins = [(p, 1) for p in range(2, 2 * ncol)] if pin_plane else []
    st = TensegrityStructure.from_members(
        nodes, bars, strings,
        bar_masses=cylinder_mass(density, radius, bl), bar_radii=radius,
        string_stiffness=axial_stiffness(string_modulus, string_radius, sl),
        string_rest_lengths=sl, damping_coefficient=damping, fixed_nodes=(0, 1),
        gravity=GRAVITY, pinned_coordinates=pins, name="arm")
    return _with_prestress(st, sigma_min)


def _rotation_to(a, b):
    """Rotation matrix taking unit vector a onto unit vector b."""
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    v = np.cross(a, b)
    c = a @ b
    if np.linalg.norm(v) < 1e-15:
        return np.eye(3) if c > 0 else -np.eye(3)
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx / (1.0 + c)


def icosahedron_geometry(bar_length=1.0):
    """Nodes, bars and strings of the six-bar tensegrity icosahedron.

    Bars are parallel to the axes in pairs; with half-length a and offset
    b = a/2 all 24 strings have equal length.
    """
    a = bar_length / 2.0
    b = a / 2.0
    nodes, bars = [], []
    for s in (-1, 1):   # bars along x, offset in z
        bars.append((len(nodes), len(nodes) + 1))
        nodes += [[-a, 0, s * b], [a, 0, s * b]]
    for s in (-1, 1):   # along y, offset in x
        bars.append((len(nodes), len(nodes) + 1))
        nodes += [[s * b, -a, 0], [s * b, a, 0]]
    for s in (-1, 1):   # along z, offset in y
        bars.append((len(nodes), len(nodes) + 1))
        nodes += [[0, s * b, -a], [0, s * b, a]]
    nodes = np.array(nodes, dtype=float)
    partner = {i: j for i, j in bars} | {j: i for i, j in bars}
    d = np.linalg.norm(nodes[:, None] - nodes[None], axis=2)
    target = np.sqrt((a - b) ** 2 + a**2 + b**2)
    strings = [(i, j) for i in range(12) for j in range(i + 1, 12)
               if partner[i] != j and abs(d[i, j] - target) < 1e-9]
    return nodes, bars, strings


def _octant_triangle(nodes, sign):
    """Indices of the three nodes forming the string triangle in one octant."""
    idx = [i for i, p in enumerate(nodes)
           if np.all(np.sign(p)[np.abs(p) > 1e-12] == np.asarray(sign)[np.abs(p) > 1e-12])]
    return sorted(idx, key=lambda i: int(np.argmax(np.abs(nodes[i]))))


def builtin_ball(bar_length=1.0, density=1300.0, radius=0.01, payload_mass=1.0,
                 string_modulus=NYLON_E, string_radius=NYLON_RADIUS, sigma_min=50.0,
                 damping=0.0, height=None):
    """Six-bar ball with a payload at its centre.

    The (-,-,-) string triangle is rotated to face straight down and its
    three nodes are fixed.  The symmetric shape has a first-order breathing
    mechanism, so no exact pre-stress exists there once the payload pulls on
    it.  Instead every string is given rest length for force density
    ``sigma_min`` in the symmetric shape, the nodes are settled into the
    loaded equilibrium (they move by about 2 cm), and the LP pre-stress is
    then computed at the settled shape so every string is taut.  The payload (node 12) hangs from eight strings:
    the top triangle, the bottom triangle and one antipodal pair of
    mid-height nodes.  ``ball_top_nodes`` lists the top-triangle nodes in the
    order they receive the x, y and z forcing.
    """
    nodes, bars, strings = icosahedron_geometry(bar_length)
    bottom = _octant_triangle(nodes, (-1, -1, -1))
    top = _octant_triangle(nodes, (1, 1, 1))
    R = _rotation_to(np.array([-1.0, -1.0, -1.0]), np.array([0.0, 0.0, -1.0]))
    nodes = nodes @ R.T
    if height is None:
        height = -nodes[bottom, 2].mean()
    nodes[:, 2] += height
    centre = nodes.mean(axis=0)
    tri = set(bottom) | set(top)
    mids = [i for i in range(12) if i not in tri]
    i0 = mids[0]
    opp = min(mids, key=lambda j: np.linalg.norm(nodes[j] - (2 * centre - nodes[i0])))
    payload = 12
    nodes = np.vstack([nodes, centre])
    strings = strings + [(payload, p) for p in top + bottom + [i0, opp]]
    bl = _lengths(nodes, bars)
    sl = _lengths(nodes, strings)
    st = TensegrityStructure.from_members(
        nodes, bars, strings,
        bar_masses=cylinder_mass(density, radius, bl), bar_radii=radius,
        string_stiffness=axial_stiffness(string_modulus, string_radius, sl),
        string_rest_lengths=sl, point_masses={payload: payload_mass},
        damping_coefficient=damping, fixed_nodes=tuple(bottom), gravity=(0.0, 0.0, 0.0),
        name="ball")
    sigma = np.full(len(strings), float(sigma_min))
    st = st.replace(string_rest_lengths=rest_lengths_for(build_structure(st), sigma))
    return _with_prestress(_settle(st), sigma_min)


def ball_top_nodes(structure):
    """Top-triangle nodes of :func:`builtin_ball` (the three highest bar nodes)."""
    z = structure.nodes[:12, 2]
    top = np.argsort(z)[-3:]
    return sorted(int(i) for i in top)


def builtin_pendulum(length=1.0, radius=1e-3, density=1300.0, angle=0.01,
                     gravity=GRAVITY):
    """Single bar pinned at node 0 (the origin), released at ``angle`` from vertical."""
    tip = [length * np.sin(angle), 0.0, -length * np.cos(angle)]
    return TensegrityStructure.from_members(
        [[0.0, 0.0, 0.0], tip], [(0, 1)], [],
        bar_masses=cylinder_mass(density, radius, length), bar_radii=radius,
        fixed_nodes=(0,), gravity=gravity, name="pendulum")


def sinusoidal_load(n3, nodes_axes, amplitude=300.0):
    """Callback f(t, q, qdot) applying amplitude*sin(t) on (node, axis) pairs."""
    idx = np.array([3 * p + a for p, a in nodes_axes], dtype=int)

    def force(t, q, qdot):
        f = np.zeros(n3)
        f[idx] = amplitude * np.sin(t)
        return f

    force.indices = idx
    force.amplitude = amplitude
    return force


def builtin_forcing(name, structure, amplitude=300.0):
    """External load used by the benchmark runs, or ``None``."""
    n3 = 3 * structure.n_nodes
    if name == "arm":
        return sinusoidal_load(n3, [(structure.n_nodes - 1, 2)], amplitude)
    if name == "ball":
        top = ball_top_nodes(structure)
        return sinusoidal_load(n3, list(zip(top, (0, 1, 2))), amplitude)
    return None


# nodes (0-based) whose motion the benchmark runs report
RECORD_NODES = {"tbar": (2, 3), "arm": (4, 7, 9), "ball": ()}

BUILTINS = {
    "tbar": builtin_tbar,
    "arm": builtin_arm,
    "ball": builtin_ball,
}
