"""Sparse direct solvers for the two systems of each time step."""

import hashlib
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(np.linalg.LinAlgError):
    """Factorization or residual failure of a linear solve."""


def fingerprint(A):
    """Dimensions plus a SHA-256 digest of the CSR arrays."""
    A = sp.csr_matrix(A)
    A.sort_indices()
    h = hashlib.sha256()
    for arr in (A.indptr, A.indices, A.data):
        h.update(np.ascontiguousarray(arr).tobytes())
    return (A.shape, h.hexdigest())


@dataclass(frozen=True)
class Factorization:
    """LU factors of a fixed sparse matrix, reusable across right-hand sides."""

    matrix: sp.csc_matrix = field(repr=False)
    lu: object = field(repr=False)
    fingerprint: tuple
    # SuperLU objects are not documented as thread-safe; solves are serialised
    _lock: object = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def shape(self):
        return self.matrix.shape

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        with self._lock:
            return self.lu.solve(b)


def factorize_spd(A):
    """Factor a symmetric positive definite matrix.

    SuperLU is run in symmetric mode (diagonal pivots preferred); a
    non-positive pivot or an off-diagonal pivot means ``A`` is not SPD,
    which here always points at a constraint bug.
    """
    A = sp.csc_matrix(A, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise SolverError(f"matrix is not square: {A.shape}")
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}") from exc
    piv = lu.U.diagonal()
    if not np.array_equal(lu.perm_r, lu.perm_c) or np.any(piv <= 0):
        raise SolverError(
            f"matrix is not positive definite (min pivot {piv.min():.3e})"
        )
    return Factorization(A, lu, fingerprint(A))


def relative_residual(A, x, b):
    """Columnwise ``||A x - b||_2 / ||b||_2`` (residual norm if ``b = 0``)."""
    r = A @ x - b
    rn = np.linalg.norm(r, axis=0)
    bn = np.linalg.norm(b, axis=0)
    return np.where(bn > 0, rn / np.where(bn > 0, bn, 1.0), rn)


class SaddleSystem:
    """Monolithic Taylor-Hood system of the fluid subproblem for fixed ``dt``.

    Unknowns are the free velocity DOFs (including the ``u_r`` trace on
    Gamma, which *is* the structure velocity) followed by all pressure DOFs.
    The fluid weak form is multiplied by ``dt`` and written symmetrically::

        [ M_f + P^T M_s P + dt A    -dt B^T ] [u]   [f]
        [ -dt B                      -eps I ] [p] = [g]

    where ``P`` picks the trace DOFs out of the velocity and ``eps`` is the
    optional pressure regularisation (default 0).

    Parameters
    ----------
    ops : FluidOperators
    layout : DofLayout
    dt : float
    pressure_reg : float
        Diagonal shift on the pressure block, for debugging only.
    tol : float
        Relative residual required of every solve.
    """

    def __init__(self, ops, layout, dt, pressure_reg=0.0, tol=1e-10):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt!r}")
        self.ops = ops
        self.layout = layout
        self.dt = float(dt)
        self.tol = tol
        free = layout.vel_free
        self.free = free
        self.n_free = free.size
        self.n_p = layout.n_pressure

        nv = layout.n_vel
        n_int = layout.trace_dofs.size
        P = sp.csr_matrix(
            (np.ones(n_int), (np.arange(n_int), layout.trace_dofs)), shape=(n_int, nv)
        )
        self.trace = P
        self.M_gint = ops.M_gamma_int
        K = ops.M_f + P.T @ ops.M_s @ P + self.dt * ops.A_visc
        K = K[free][:, free]
        Bf = ops.B_div[:, free]
        reg = sp.identity(self.n_p) * float(pressure_reg)
        self.matrix = sp.bmat([[K, -self.dt * Bf.T], [-self.dt * Bf, -reg]], format="csc")
        try:
            self.lu = spla.splu(self.matrix, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(
                f"saddle system singular (n_free={self.n_free}, n_p={self.n_p}): {exc}"
            ) from exc
        self.fingerprint = fingerprint(self.matrix)
        self._lock = threading.Lock()

    def _lu_solve(self, b):
        with self._lock:
            return self.lu.solve(b)

    @property
    def size(self):
        return self.n_free + self.n_p

    def split(self, x):
        """Full velocity vector(s) and pressure from a monolithic solution."""
        x = np.asarray(x)
        u = np.zeros((self.layout.n_vel,) + x.shape[1:])
        u[self.free] = x[:self.n_free]
        return u, x[self.n_free:]

    def pack(self, u, p):
        """Monolithic vector from full velocity and pressure (inverse of split)."""
        return np.concatenate([np.asarray(u)[self.free], np.asarray(p)])

    def solve(self, rhs):
        """Solve with residual check; one refinement step if needed."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.size:
            raise ValueError(f"rhs has {rhs.shape[0]} rows, system has {self.size}")
        x = self._lu_solve(rhs)
        res = relative_residual(self.matrix, x, rhs)
        if np.any(res > self.tol):
            x = x + self._lu_solve(rhs - self.matrix @ x)
            res = relative_residual(self.matrix, x, rhs)
            if np.any(res > self.tol):
                raise SolverError(
                    f"saddle solve residual {np.max(res):.3e} exceeds {self.tol:.0e} "
                    f"(dt={self.dt}, size={self.size})"
                )
        return x

    def rhs(self, u_prev, v_prev, p_in, p_out):
        """Right-hand side of the fluid step.

        ``u_prev`` is the full velocity, ``v_prev`` the structure velocity on
        all interface nodes (endpoint values allowed). Trailing batch axes
        are supported when ``p_in``/``p_out`` are scalars.
        """
        ops = self.ops
        f = ops.M_f @ u_prev + self.trace.T @ (self.M_gint @ v_prev)
        load = self.dt * (p_in * ops.b_in - p_out * ops.b_out)
        if f.ndim > 1:
            load = load[:, None]
        f = f + load
        g = np.zeros((self.n_p,) + f.shape[1:])
        return np.concatenate([f[self.free], g])


def solve_saddle(ops, layout, dt, rhs, system=None):
    """Solve the fluid saddle system; returns ``(u_full, p)``.

    A prebuilt ``system`` is reused when given (it must match ``dt``).
    """
    if system is None:
        system = SaddleSystem(ops, layout, dt)
    elif system.dt != dt:
        raise ValueError("system was factorized for a different dt")
    return system.split(system.solve(rhs))
