"""Structured meshes for the channel Omega_f = [0, L] x [0, R] and its top edge.

The fluid mesh is a uniform grid of ``nz x nr`` rectangles. Taylor-Hood
elements need two node sets on it:

* the *vertex* lattice, ``(nz + 1) x (nr + 1)`` points, carrying the bilinear
  pressure;
* the *node* lattice, ``(2 nz + 1) x (2 nr + 1)`` points (vertices, edge
  midpoints and cell centres), carrying the biquadratic velocity.

Both lattices are numbered row-major with ``z`` running fastest, so the node
with lattice index ``(i, j)`` has number ``j * (2 nz + 1) + i``.

The interface mesh discretises the elastic wall Gamma = {r = R} with ``nz``
quadratic elements; its ``2 nz + 1`` nodes coincide with the top row of the
fluid node lattice.
"""

from dataclasses import dataclass, field

import numpy as np

GAMMA = "Gamma"
GAMMA_B = "Gamma_b"
GAMMA_IN = "Gamma_in"
GAMMA_OUT = "Gamma_out"
BOUNDARY_TAGS = (GAMMA, GAMMA_B, GAMMA_IN, GAMMA_OUT)

TAYLOR_HOOD = "taylor-hood"


def _uniform(length, count):
    # shared by the fluid and interface meshes so top-edge nodes agree bit-exactly
    return length * np.arange(count + 1, dtype=float) / count


@dataclass(frozen=True)
class FluidMesh:
    """Uniform quadrilateral mesh of the fluid channel.

    Attributes
    ----------
    nz, nr : int
        Element counts along ``z`` and ``r``.
    L, R : float
        Channel length and height.
    vertices : ndarray, shape (nv, 2)
        Vertex coordinates ``(z, r)``.
    nodes : ndarray, shape (nn, 2)
        Quadratic node coordinates.
    elements : ndarray, shape (ne, 4)
        Vertex indices of each cell, counter-clockwise from the lower left.
    element_nodes : ndarray, shape (ne, 9)
        Quadratic node indices of each cell, local index ``3 * b + a`` for the
        local lattice position ``(a, b)``.
    boundary_edges : dict
        Tag -> array of shape (k, 2) of vertex index pairs.
    """

    nz: int
    nr: int
    L: float
    R: float
    vertices: np.ndarray = field(repr=False)
    nodes: np.ndarray = field(repr=False)
    elements: np.ndarray = field(repr=False)
    element_nodes: np.ndarray = field(repr=False)
    boundary_edges: dict = field(repr=False)

    @property
    def hz(self):
        return self.L / self.nz

    @property
    def hr(self):
        return self.R / self.nr

    @property
    def n_elements(self):
        return self.nz * self.nr

    @property
    def node_shape(self):
        return (2 * self.nz + 1, 2 * self.nr + 1)

    @property
    def n_nodes(self):
        return (2 * self.nz + 1) * (2 * self.nr + 1)

    @property
    def n_vertices(self):
        return (self.nz + 1) * (self.nr + 1)

    def node_index(self, i, j):
        return np.asarray(j) * (2 * self.nz + 1) + np.asarray(i)

    def vertex_index(self, i, j):
        return np.asarray(j) * (self.nz + 1) + np.asarray(i)

    def node_tags(self, node):
        """Boundary tags of a quadratic node (empty for interior nodes)."""
        i, j = node % (2 * self.nz + 1), node // (2 * self.nz + 1)
        return _lattice_tags(i, j, 2 * self.nz, 2 * self.nr)

    def vertex_tags(self, vertex):
        i, j = vertex % (self.nz + 1), vertex // (self.nz + 1)
        return _lattice_tags(i, j, self.nz, self.nr)

    def boundary_nodes(self, tag):
        """Quadratic node indices on the closed boundary part ``tag``."""
        mz, mr = 2 * self.nz, 2 * self.nr
        i = np.arange(mz + 1)
        j = np.arange(mr + 1)
        if tag == GAMMA:
            return self.node_index(i, mr)
        if tag == GAMMA_B:
            return self.node_index(i, 0)
        if tag == GAMMA_IN:
            return self.node_index(0, j)
        if tag == GAMMA_OUT:
            return self.node_index(mz, j)
        raise KeyError(tag)

    @property
    def corner_vertices(self):
        return self.vertex_index(
            np.array([0, self.nz, self.nz, 0]), np.array([0, 0, self.nr, self.nr])
        )


@dataclass(frozen=True)
class InterfaceMesh:
    """Uniform 1D quadratic mesh of Gamma = [0, L]."""

    nz: int
    L: float
    vertices: np.ndarray = field(repr=False)
    nodes: np.ndarray = field(repr=False)
    elements: np.ndarray = field(repr=False)

    @property
    def h(self):
        return self.L / self.nz

    @property
    def n_nodes(self):
        return 2 * self.nz + 1

    @property
    def interior_nodes(self):
        return np.arange(1, 2 * self.nz)


def _lattice_tags(i, j, mi, mj):
    tags = set()
    if j == mj:
        tags.add(GAMMA)
    if j == 0:
        tags.add(GAMMA_B)
    if i == 0:
        tags.add(GAMMA_IN)
    if i == mi:
        tags.add(GAMMA_OUT)
    return frozenset(tags)


def build_meshes(nz, nr, L, R):
    """Build the fluid mesh and the matching interface mesh.

    Parameters
    ----------
    nz, nr : int
        Element counts, both at least 2.
    L, R : float
        Positive channel length and height.

    Returns
    -------
    (FluidMesh, InterfaceMesh)
    """
    for name, val in (("nz", nz), ("nr", nr)):
        if int(val) != val or val < 2:
            raise ValueError(f"{name} must be an integer >= 2, got {val!r}")
    for name, val in (("L", L), ("R", R)):
        if not np.isfinite(val) or val <= 0:
            raise ValueError(f"{name} must be positive, got {val!r}")
    nz, nr, L, R = int(nz), int(nr), float(L), float(R)

    zv, rv = _uniform(L, nz), _uniform(R, nr)
    zn, rn = _uniform(L, 2 * nz), _uniform(R, 2 * nr)
    vertices = np.stack(np.meshgrid(zv, rv, indexing="xy"), axis=-1).reshape(-1, 2)
    nodes = np.stack(np.meshgrid(zn, rn, indexing="xy"), axis=-1).reshape(-1, 2)

    ei, ej = np.meshgrid(np.arange(nz), np.arange(nr), indexing="xy")
    ei, ej = ei.ravel(), ej.ravel()
    vid = lambda i, j: j * (nz + 1) + i
    elements = np.stack(
        [vid(ei, ej), vid(ei + 1, ej), vid(ei + 1, ej + 1), vid(ei, ej + 1)], axis=1
    )
    nid = lambda i, j: j * (2 * nz + 1) + i
    element_nodes = np.stack(
        [nid(2 * ei + a, 2 * ej + b) for b in range(3) for a in range(3)], axis=1
    )

    iz, ir = np.arange(nz), np.arange(nr)
    boundary_edges = {
        GAMMA_B: np.stack([vid(iz, 0), vid(iz + 1, 0)], axis=1),
        GAMMA: np.stack([vid(iz, nr), vid(iz + 1, nr)], axis=1),
        GAMMA_IN: np.stack([vid(0, ir), vid(0, ir + 1)], axis=1),
        GAMMA_OUT: np.stack([vid(nz, ir), vid(nz, ir + 1)], axis=1),
    }

    fmesh = FluidMesh(nz, nr, L, R, vertices, nodes, elements, element_nodes,
                      boundary_edges)

    ke = np.arange(nz)
    imesh = InterfaceMesh(
        nz, L, zv.copy(), zn.copy(), np.stack([2 * ke, 2 * ke + 1, 2 * ke + 2], axis=1)
    )
    return fmesh, imesh


@dataclass(frozen=True)
class DofLayout:
    """Global numbering of every discrete unknown.

    Velocity DOFs are ``u_z`` at node ``k`` -> ``k`` and ``u_r`` at node ``k``
    -> ``n_nodes + k``. Interface fields (``eta`` and ``v``) are stored on all
    ``2 nz + 1`` interface nodes; the clamped endpoints are constrained.

    The global index space concatenates blocks in the order velocity,
    pressure, eta, v (see :attr:`offsets`).

    Attributes
    ----------
    vel_constrained : ndarray
        Velocity DOFs fixed to zero by the essential conditions.
    vel_free : ndarray
        Complement of ``vel_constrained``, sorted.
    trace_dofs : ndarray
        ``trace_dofs[k]`` is the ``u_r`` DOF at the top node above interior
        interface node ``k + 1``.
    """

    n_nodes: int
    n_vel: int
    n_pressure: int
    n_interface: int
    vel_constrained: np.ndarray = field(repr=False)
    vel_free: np.ndarray = field(repr=False)
    trace_dofs: np.ndarray = field(repr=False)
    interface_interior: np.ndarray = field(repr=False)
    discretization: str = TAYLOR_HOOD

    @property
    def offsets(self):
        o_p = self.n_vel
        o_eta = o_p + self.n_pressure
        o_v = o_eta + self.n_interface
        return {"u": 0, "p": o_p, "eta": o_eta, "v": o_v, "end": o_v + self.n_interface}

    @property
    def n_total(self):
        return self.offsets["end"]

    def uz(self, node):
        return np.asarray(node)

    def ur(self, node):
        return self.n_nodes + np.asarray(node)

    @property
    def constrained(self):
        """Global indices of every constrained unknown."""
        o = self.offsets
        ends = np.array([0, self.n_interface - 1])
        return np.concatenate([
            self.vel_constrained,
            o["eta"] + ends,
            o["v"] + ends,
        ])

    @property
    def identification(self):
        """Map global interior-``v`` index -> global ``u_r`` trace index."""
        o = self.offsets
        return dict(zip((o["v"] + self.interface_interior).tolist(),
                        self.trace_dofs.tolist()))

    @property
    def free_position(self):
        """Inverse of ``vel_free``: position in the free list, -1 if constrained."""
        pos = np.full(self.n_vel, -1, dtype=np.int64)
        pos[self.vel_free] = np.arange(self.vel_free.size)
        return pos


def build_dof_layout(fmesh, imesh, discretization=TAYLOR_HOOD):
    """Number all unknowns and classify the essential constraints.

    ``u_z = 0`` on Gamma and ``u_r = 0`` on Gamma_b, Gamma_in and Gamma_out.
    ``d_r u_z = 0`` on Gamma_b is natural and not imposed.
    """
    if discretization != TAYLOR_HOOD:
        raise ValueError(f"unsupported discretization {discretization!r}")
    if imesh.nz != fmesh.nz or imesh.L != fmesh.L:
        raise RuntimeError("interface mesh does not match the fluid top edge")
    top = fmesh.boundary_nodes(GAMMA)
    if not np.array_equal(fmesh.nodes[top, 0], imesh.nodes):
        raise RuntimeError("fluid top-edge nodes differ from interface nodes")

    nn = fmesh.n_nodes
    uz_fixed = top
    ur_fixed = np.unique(np.concatenate([
        fmesh.boundary_nodes(GAMMA_B),
        fmesh.boundary_nodes(GAMMA_IN),
        fmesh.boundary_nodes(GAMMA_OUT),
    ]))
    constrained = np.unique(np.concatenate([uz_fixed, nn + ur_fixed]))
    free = np.setdiff1d(np.arange(2 * nn), constrained)

    interior = imesh.interior_nodes
    trace = nn + top[interior]
    if np.intersect1d(trace, constrained).size:
        raise RuntimeError("trace DOFs overlap constrained DOFs")
    return DofLayout(
        n_nodes=nn,
        n_vel=2 * nn,
        n_pressure=fmesh.n_vertices,
        n_interface=imesh.n_nodes,
        vel_constrained=constrained,
        vel_free=free,
        trace_dofs=trace,
        interface_interior=interior,
        discretization=discretization,
    )
