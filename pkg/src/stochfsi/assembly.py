"""Finite element operators on the structured meshes.

Every integrand here is polynomial of degree at most 4 per coordinate, so
three-point Gauss rules in each direction integrate them exactly.

All element contributions are gathered into triplets and reduced in a fixed
order (stable sort on the flat index, element order preserved) so the
assembled matrices are bit-reproducible and exactly symmetric whenever the
element matrices are.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import GAMMA_IN, GAMMA_OUT

_GX, _GW = np.polynomial.legendre.leggauss(3)
GAUSS_POINTS = 0.5 * (_GX + 1.0)
GAUSS_WEIGHTS = 0.5 * _GW


def lagrange_1d(xi, degree=2):
    """Values and derivatives of the equispaced Lagrange basis on [0, 1].

    Returns two arrays of shape ``(len(xi), degree + 1)``.
    """
    xi = np.asarray(xi, dtype=float)
    if degree == 1:
        val = np.stack([1.0 - xi, xi], axis=1)
        der = np.stack([-np.ones_like(xi), np.ones_like(xi)], axis=1)
    elif degree == 2:
        val = np.stack([
            2.0 * (xi - 0.5) * (xi - 1.0),
            -4.0 * xi * (xi - 1.0),
            2.0 * xi * (xi - 0.5),
        ], axis=1)
        der = np.stack([4.0 * xi - 3.0, 4.0 - 8.0 * xi, 4.0 * xi - 1.0], axis=1)
    else:
        raise ValueError(f"degree must be 1 or 2, got {degree}")
    return val, der


def _sym(a):
    return 0.5 * (a + a.T)


def assemble_triplets(rows, cols, vals, shape):
    """Deterministic COO -> CSR reduction (duplicates summed in input order)."""
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals, dtype=float).ravel()
    key = rows * shape[1] + cols
    order = np.argsort(key, kind="stable")
    key, vals = key[order], vals[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    summed = np.add.reduceat(vals, starts) if vals.size else vals
    ukey = key[starts]
    out = sp.csr_matrix((summed, (ukey // shape[1], ukey % shape[1])), shape=shape)
    out.sort_indices()
    return out


def _scatter(dofs, ke, shape):
    """Assemble identical element matrices ``ke`` over the rows of ``dofs``."""
    n_loc = dofs.shape[1]
    rows = np.repeat(dofs, n_loc, axis=1)
    cols = np.tile(dofs, (1, n_loc))
    vals = np.broadcast_to(ke.ravel(), rows.shape)
    return assemble_triplets(rows, cols, vals, shape)


def interface_matrices(imesh, degree=2):
    """Full mass, stiffness and load ``int phi_i`` on Gamma (no constraints)."""
    h = imesh.h
    val, der = lagrange_1d(GAUSS_POINTS, degree)
    w = GAUSS_WEIGHTS
    me = _sym(h * (val.T * w) @ val)
    ke = _sym((der.T * w) @ der / h)
    le = h * (w @ val)
    if degree == 2:
        conn = imesh.elements
        n = imesh.n_nodes
    else:
        ke_ = np.arange(imesh.nz)
        conn = np.stack([ke_, ke_ + 1], axis=1)
        n = imesh.nz + 1
    M = _scatter(conn, me, (n, n))
    K = _scatter(conn, ke, (n, n))
    ones = np.zeros(n)
    np.add.at(ones, conn, np.broadcast_to(le, conn.shape))
    return M, K, ones


def assemble_structure(imesh, layout=None, degree=2):
    """Structure mass, stiffness and load on the clamped space H_0^1(Gamma).

    Rows and columns of the two endpoint nodes are removed. With
    ``degree=1`` the interface vertices are used as a linear mesh (the
    ``layout`` argument is then ignored).

    Returns
    -------
    M_s, K_s : csr_matrix
    ones : ndarray
        ``ones[i] = int_Gamma phi_i dz`` for the interior basis functions.
    """
    M, K, ones = interface_matrices(imesh, degree)
    if degree == 2 and layout is not None:
        inner = layout.interface_interior
    else:
        inner = np.arange(1, M.shape[0] - 1)
    return M[inner][:, inner].tocsr(), K[inner][:, inner].tocsr(), ones[inner]


@dataclass(frozen=True)
class FluidOperators:
    """Assembled operators of the coupled problem.

    Fluid operators act on the full velocity vector (no constraints applied);
    restriction to free DOFs happens when a linear system is formed.

    Attributes
    ----------
    M_f : fluid velocity mass.
    A_visc : ``2 mu int D(u):D(q)``.
    lap : ``int grad u : grad q`` (used for the Korn check).
    B_div : ``int chi div u``, shape (n_pressure, n_vel).
    M_gamma, K_gamma, ones_gamma : interface mass, stiffness and
        ``int phi_i`` on all interface nodes.
    M_s, K_s, ones_s : the same restricted to interior interface nodes.
    b_in, b_out : ``int_{Gamma_in} q_z dr`` and ``int_{Gamma_out} q_z dr``.
    """

    mu: float
    L: float
    M_f: sp.csr_matrix = field(repr=False)
    A_visc: sp.csr_matrix = field(repr=False)
    lap: sp.csr_matrix = field(repr=False)
    B_div: sp.csr_matrix = field(repr=False)
    M_gamma: sp.csr_matrix = field(repr=False)
    K_gamma: sp.csr_matrix = field(repr=False)
    ones_gamma: np.ndarray = field(repr=False)
    M_s: sp.csr_matrix = field(repr=False)
    K_s: sp.csr_matrix = field(repr=False)
    ones_s: np.ndarray = field(repr=False)
    b_in: np.ndarray = field(repr=False)
    b_out: np.ndarray = field(repr=False)

    @property
    def M_gamma_int(self):
        """Interface mass rows of interior nodes against all nodes."""
        n = self.M_gamma.shape[0]
        return self.M_gamma[1:n - 1].tocsr()


def _q2_reference(hz, hr):
    val, der = lagrange_1d(GAUSS_POINTS, 2)
    # local index 3*b + a, quadrature index 3*qr + qz
    phi = np.einsum("za,rb->rzba", val, val).reshape(9, 9)
    dz = np.einsum("za,rb->rzba", der, val).reshape(9, 9) / hz
    dr = np.einsum("za,rb->rzba", val, der).reshape(9, 9) / hr
    w = np.outer(GAUSS_WEIGHTS, GAUSS_WEIGHTS).ravel() * hz * hr
    return phi, dz, dr, w


def _q1_reference():
    val, _ = lagrange_1d(GAUSS_POINTS, 1)
    # vertex order (0,0), (1,0), (1,1), (0,1)
    ab = [(0, 0), (1, 0), (1, 1), (0, 1)]
    psi = np.stack(
        [np.einsum("z,r->rz", val[:, a], val[:, b]).ravel() for a, b in ab], axis=1
    )
    return psi


def _edge_load(fmesh, tag):
    """``int q_z dr`` over a vertical edge, as a vector on the velocity DOFs."""
    val, _ = lagrange_1d(GAUSS_POINTS, 2)
    le = fmesh.hr * (GAUSS_WEIGHTS @ val)
    nodes = fmesh.boundary_nodes(tag)
    out = np.zeros(2 * fmesh.n_nodes)
    for k in range(fmesh.nr):
        out[nodes[2 * k:2 * k + 3]] += le
    return out


def assemble_fluid(fmesh, imesh, layout, mu):
    """Assemble every operator of the coupled problem.

    Parameters
    ----------
    fmesh, imesh : meshes from :func:`build_meshes`.
    layout : DofLayout
    mu : float
        Fluid viscosity, positive.
    """
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu!r}")
    phi, dz, dr, w = _q2_reference(fmesh.hz, fmesh.hr)
    psi = _q1_reference()

    mass = _sym((phi.T * w) @ phi)
    kzz = (dz.T * w) @ dz
    krr = (dr.T * w) @ dr
    krz = (dr.T * w) @ dz  # [i, j] = int d_r phi_i d_z phi_j
    visc = np.block([
        [2.0 * mu * (kzz + 0.5 * krr), mu * krz],
        [mu * krz.T, 2.0 * mu * (krr + 0.5 * kzz)],
    ])
    visc = _sym(visc)
    lap = _sym(np.block([[kzz + krr, np.zeros((9, 9))], [np.zeros((9, 9)), kzz + krr]]))
    bdiv = np.hstack([(psi.T * w) @ dz, (psi.T * w) @ dr])  # (4, 18)

    nn = fmesh.n_nodes
    en = fmesh.element_nodes
    vel = np.hstack([en, en + nn])
    shape = (2 * nn, 2 * nn)
    M_f = _scatter(vel, _sym(np.kron(np.eye(2), mass)), shape)
    A_visc = _scatter(vel, visc, shape)
    lap_m = _scatter(vel, lap, shape)

    ev = fmesh.elements
    rows = np.repeat(ev, 18, axis=1)
    cols = np.tile(vel, (1, 4))
    B_div = assemble_triplets(rows, cols, np.broadcast_to(bdiv.ravel(), rows.shape),
                              (fmesh.n_vertices, 2 * nn))

    M_g, K_g, ones_g = interface_matrices(imesh, 2)
    M_s, K_s, ones_s = assemble_structure(imesh, layout)
    return FluidOperators(
        mu=float(mu),
        L=float(fmesh.L),
        M_f=M_f,
        A_visc=A_visc,
        lap=lap_m,
        B_div=B_div,
        M_gamma=M_g,
        K_gamma=K_g,
        ones_gamma=ones_g,
        M_s=M_s,
        K_s=K_s,
        ones_s=ones_s,
        b_in=_edge_load(fmesh, GAMMA_IN),
        b_out=_edge_load(fmesh, GAMMA_OUT),
    )


def interpolate_velocity(fmesh, func):
    """Nodal interpolant of ``func(z, r) -> (u_z, u_r)`` as a velocity vector."""
    z, r = fmesh.nodes[:, 0], fmesh.nodes[:, 1]
    uz, ur = func(z, r)
    return np.concatenate([np.broadcast_to(uz, z.shape), np.broadcast_to(ur, z.shape)]).astype(float)


def fluid_load(fmesh, func):
    """``int f . q`` for every velocity basis function ``q`` (3x3 Gauss)."""
    phi, _, _, w = _q2_reference(fmesh.hz, fmesh.hr)
    zq = GAUSS_POINTS * fmesh.hz
    rq = GAUSS_POINTS * fmesh.hr
    qz, qr = np.meshgrid(zq, rq, indexing="xy")
    qz, qr = qz.ravel(), qr.ravel()
    out = np.zeros(2 * fmesh.n_nodes)
    v0 = fmesh.vertices[fmesh.elements[:, 0]]
    for e in range(fmesh.n_elements):
        fz, fr = func(v0[e, 0] + qz, v0[e, 1] + qr)
        fz = np.broadcast_to(fz, qz.shape)
        fr = np.broadcast_to(fr, qz.shape)
        nodes = fmesh.element_nodes[e]
        out[nodes] += phi.T @ (w * fz)
        out[nodes + fmesh.n_nodes] += phi.T @ (w * fr)
    return out


def interface_load(imesh, func):
    """``int f psi dz`` for every quadratic interface basis function."""
    val, _ = lagrange_1d(GAUSS_POINTS, 2)
    w = GAUSS_WEIGHTS * imesh.h
    out = np.zeros(imesh.n_nodes)
    for e, conn in enumerate(imesh.elements):
        zq = imesh.vertices[e] + GAUSS_POINTS * imesh.h
        out[conn] += val.T @ (w * np.broadcast_to(func(zq), zq.shape))
    return out
