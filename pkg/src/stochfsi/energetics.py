"""Discrete energy, dissipation and the pathwise energy identities.

With full-length interface vectors the energy of a stage is

    E = 1/2 (u^T M_f u + v^T M_Gamma v + eta^T K_Gamma eta)

and ``D^n = dt mu int |D(u^n)|^2 = dt / 2 * u^T A_visc u``. Each sub-step
satisfies an exact algebraic identity; the residuals reported here are
``|LHS - RHS| / max(1, |RHS|)``.

All functions accept a trailing batch axis on the coefficient arrays.
"""

import csv
from dataclasses import dataclass, field, fields

import numpy as np

STAGE_LABELS = ("n", "n+1/3", "n+2/3", "n+1")
SCHEMA_VERSION = "1.0"


def quad(M, x):
    """``x^T M x`` (per column for batched ``x``)."""
    return np.einsum("i...,i...->...", x, M @ x)


def _rel(lhs, rhs):
    return np.abs(lhs - rhs) / np.maximum(1.0, np.abs(rhs))


def energy_parts(state, ops):
    """``(u^T M_f u, v^T M v, eta^T K eta)`` of a stage."""
    return quad(ops.M_f, state.u), quad(ops.M_gamma, state.v), quad(ops.K_gamma, state.eta)


def discrete_energy(state, ops):
    """Total discrete energy; at stage ``n+2/3`` ``v`` is the unconstrained field."""
    a, b, c = energy_parts(state, ops)
    return 0.5 * (a + b + c)


def discrete_dissipation(u, dt, mu, ops):
    """``dt * mu * int |D(u)|^2``.

    ``ops.A_visc`` carries ``2 mu_ops``, so the quadratic form is rescaled to
    the requested ``mu``.
    """
    if not dt > 0 or not mu > 0:
        raise ValueError("dt and mu must be positive")
    return dt * mu * quad(ops.A_visc, u) / (2.0 * ops.mu)


def boundary_flux(u, ops):
    """``(int_{Gamma_in} u_z dr, int_{Gamma_out} u_z dr)``."""
    return ops.b_in @ u, ops.b_out @ u


def _check_stages(kind, before, after):
    from .splitting import Stage

    want = {"structure": (Stage.WHOLE, Stage.STRUCTURE),
            "stochastic": (Stage.STRUCTURE, Stage.STOCHASTIC),
            "fluid": (Stage.STOCHASTIC, Stage.WHOLE)}
    if kind not in want:
        raise ValueError(f"unknown identity kind {kind!r}")
    if (before.stage, after.stage) != want[kind]:
        raise ValueError(
            f"{kind} identity needs stages {[STAGE_LABELS[s] for s in want[kind]]}, got "
            f"({STAGE_LABELS[before.stage]}, {STAGE_LABELS[after.stage]})"
        )


def check_step_identity(kind, before, after, ops, dt=None, dW=None, p_in=0.0, p_out=0.0):
    """Relative residual of the energy identity of one sub-step.

    Parameters
    ----------
    kind : {"structure", "stochastic", "fluid"}
    before, after : SplitState
        Consecutive stages.
    dt : float
        Needed for ``fluid``.
    dW : float or ndarray
        Needed for ``stochastic``.
    p_in, p_out : float
        Averaged pressures of the step, for ``fluid``.
    """
    _check_stages(kind, before, after)
    e0 = discrete_energy(before, ops)
    e1 = discrete_energy(after, ops)
    if kind == "structure":
        lhs = (e1 + 0.5 * quad(ops.M_gamma, after.v - before.v)
               + 0.5 * quad(ops.K_gamma, after.eta - before.eta))
        return _rel(lhs, e0)
    if kind == "stochastic":
        if dW is None:
            raise ValueError("stochastic identity needs dW")
        dW = np.asarray(dW, dtype=float)
        rhs = e0 + dW * (ops.ones_gamma @ before.v) + 0.5 * ops.L * dW ** 2
        return _rel(e1, rhs)
    if dt is None:
        raise ValueError("fluid identity needs dt")
    f_in, f_out = boundary_flux(after.u, ops)
    lhs = (e1 + 2.0 * discrete_dissipation(after.u, dt, ops.mu, ops)
           + 0.5 * quad(ops.M_f, after.u - before.u)
           + 0.5 * quad(ops.M_gamma, after.v - before.v))
    return _rel(lhs, e0 + dt * (p_in * f_in - p_out * f_out))


@dataclass
class EnergyLedger:
    """Per-step energy bookkeeping of one path (or a batch along the last axis).

    Step ``n`` covers ``n -> n + 1``. Stage arrays have shape ``(N, 4, ...)``
    for the stages ``n, n+1/3, n+2/3, n+1``; the others have shape ``(N, ...)``.

    Attributes
    ----------
    ku, kv, pe : kinetic fluid, kinetic structure and elastic quadratic forms
        per stage (twice the respective energies).
    D : ``D^{n+1}``.
    dv_structure, deta_structure, dv_stochastic, du_fluid, dv_fluid :
        squared increments ``||v^{n+1/3} - v^n||^2``, ``||grad(eta^{n+1/3} - eta^n)||^2``,
        ``||v^{n+2/3} - v^{n+1/3}||^2``, ``||u^{n+1} - u^{n+2/3}||^2``,
        ``||v^{n+1} - v^{n+2/3}||^2``.
    boundary_work : ``dt (P_in int_in u_z - P_out int_out u_z)`` at ``n+1``.
    stochastic_work : ``dW int_Gamma v^{n+1/3}``.
    res_structure, res_stochastic, res_fluid : identity residuals.
    """

    dt: float
    L: float
    dW: np.ndarray = field(repr=False)
    ku: np.ndarray = field(repr=False)
    kv: np.ndarray = field(repr=False)
    pe: np.ndarray = field(repr=False)
    D: np.ndarray = field(repr=False)
    dv_structure: np.ndarray = field(repr=False)
    deta_structure: np.ndarray = field(repr=False)
    dv_stochastic: np.ndarray = field(repr=False)
    du_fluid: np.ndarray = field(repr=False)
    dv_fluid: np.ndarray = field(repr=False)
    boundary_work: np.ndarray = field(repr=False)
    stochastic_work: np.ndarray = field(repr=False)
    res_structure: np.ndarray = field(repr=False)
    res_stochastic: np.ndarray = field(repr=False)
    res_fluid: np.ndarray = field(repr=False)

    @property
    def N(self):
        return self.D.shape[0]

    @property
    def E(self):
        """Stage energies, shape ``(N, 4, ...)``."""
        return 0.5 * (self.ku + self.kv + self.pe)

    @property
    def whole_energies(self):
        """``E^0 .. E^N``."""
        E = self.E
        return np.concatenate([E[:1, 0], E[:, 3]], axis=0)

    def column(self, b):
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        for k, v in kw.items():
            if isinstance(v, np.ndarray):
                kw[k] = v[..., b]
        return EnergyLedger(**kw)

    # -- derived quantities ------------------------------------------------

    def max_energy(self):
        """``max_n E^{n+i/3}`` over every stage."""
        return self.E.reshape((-1,) + self.E.shape[2:]).max(axis=0)

    def dissipation_sum(self):
        """``sum_{j=1}^N D^j``."""
        return self.D.sum(axis=0)

    def numerical_dissipation_sums(self):
        return {
            "dv_structure": self.dv_structure.sum(axis=0),
            "deta_structure": self.deta_structure.sum(axis=0),
            "dv_stochastic": self.dv_stochastic.sum(axis=0),
            "du_fluid": self.du_fluid.sum(axis=0),
            "dv_fluid": self.dv_fluid.sum(axis=0),
        }

    def vstar_quantity(self):
        """``dt sum_n ||v^{n+1/3} - v^n||^2``."""
        return self.dt * self.dv_structure.sum(axis=0)

    def max_step_residual(self):
        return np.max(np.stack([self.res_structure, self.res_stochastic, self.res_fluid]),
                      axis=(0, 1))

    def summed_residual(self, upto=None):
        """Residual of the three identities summed over steps ``0 .. upto``."""
        m = self.N if upto is None else upto + 1
        sl = slice(0, m)
        lhs = (self.E[m - 1, 3]
               + np.sum(2.0 * self.D[sl] + 0.5 * (self.dv_structure[sl] + self.deta_structure[sl]
                                                  + self.du_fluid[sl] + self.dv_fluid[sl]), axis=0))
        rhs = self.E[0, 0] + np.sum(self.stochastic_work[sl] + 0.5 * self.dv_stochastic[sl]
                                    + self.boundary_work[sl], axis=0)
        return _rel(lhs, rhs)

    def is_trivially_zero(self):
        return not (np.any(self.E) or np.any(self.dW))

    # -- output ------------------------------------------------------------

    def rows(self):
        """One row per stage: ``(n, stage, E, D, ||v||, ||grad eta||, ||u||, dW)``.

        ``n`` is the step the stage belongs to. ``D`` is given at whole steps
        only and ``dW`` on the stochastic stage.
        """
        if self.E.ndim != 2:
            raise ValueError("rows() needs a single-path ledger")
        E = self.E
        out = [(0, "n", E[0, 0], "", np.sqrt(self.kv[0, 0]), np.sqrt(self.pe[0, 0]),
                np.sqrt(self.ku[0, 0]), "")]
        for n in range(self.N):
            for k in (1, 2, 3):
                D = self.D[n] if k == 3 else ""
                dW = self.dW[n] if k == 2 else ""
                out.append((n, STAGE_LABELS[k], E[n, k], D, np.sqrt(self.kv[n, k]),
                            np.sqrt(self.pe[n, k]), np.sqrt(self.ku[n, k]), dW))
        return out

    def to_csv(self, path, header_comment=None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                for line in header_comment.splitlines():
                    fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["n", "stage", "E", "D", "norm_v", "norm_grad_eta", "norm_u", "dW"])
            for row in self.rows():
                w.writerow([x if isinstance(x, str) else repr(float(x)) if not isinstance(x, int)
                            else x for x in row])


class LedgerBuilder:
    """Accumulates :class:`EnergyLedger` entries while a path is advanced."""

    def __init__(self, ops, dt, N):
        self.ops = ops
        self.dt = float(dt)
        self.N = N
        self._rows = []

    def record(self, n, s0, s1, s2, s3, dW, p_in, p_out):
        ops, dt = self.ops, self.dt
        dW = np.asarray(dW, dtype=float)
        # u is shared by the first three stages and eta by the last three
        ku0 = quad(ops.M_f, s0.u)
        ku3 = quad(ops.M_f, s3.u)
        pe0 = quad(ops.K_gamma, s0.eta)
        pe1 = quad(ops.K_gamma, s1.eta)
        kv = [quad(ops.M_gamma, s.v) for s in (s0, s1, s2, s3)]
        ku = [ku0, ku0, ku0, ku3]
        pe = [pe0, pe1, pe1, pe1]
        E = [0.5 * (a + b + c) for a, b, c in zip(ku, kv, pe)]

        D = discrete_dissipation(s3.u, dt, ops.mu, ops)
        dvs = quad(ops.M_gamma, s1.v - s0.v)
        des = quad(ops.K_gamma, s1.eta - s0.eta)
        dvw = quad(ops.M_gamma, s2.v - s1.v)
        duf = quad(ops.M_f, s3.u - s2.u)
        dvf = quad(ops.M_gamma, s3.v - s2.v)
        f_in, f_out = boundary_flux(s3.u, ops)
        bw = dt * (p_in * f_in - p_out * f_out)
        sw = dW * (ops.ones_gamma @ s1.v)

        r_struct = _rel(E[1] + 0.5 * dvs + 0.5 * des, E[0])
        r_stoch = _rel(E[2], E[1] + sw + 0.5 * ops.L * dW ** 2)
        r_fluid = _rel(E[3] + 2.0 * D + 0.5 * duf + 0.5 * dvf, E[2] + bw)
        self._rows.append(dict(
            dW=dW, ku=np.stack(ku), kv=np.stack(kv), pe=np.stack(pe), D=D,
            dv_structure=dvs, deta_structure=des, dv_stochastic=dvw, du_fluid=duf,
            dv_fluid=dvf, boundary_work=np.broadcast_to(bw, np.shape(D)).copy(),
            stochastic_work=sw, res_structure=r_struct, res_stochastic=r_stoch,
            res_fluid=r_fluid,
        ))

    def finish(self):
        if len(self._rows) != self.N:
            raise RuntimeError(f"ledger has {len(self._rows)} of {self.N} steps")
        keys = self._rows[0].keys()
        cols = {k: np.stack([np.asarray(r[k], dtype=float) for r in self._rows]) for k in keys}
        return EnergyLedger(dt=self.dt, L=self.ops.L, **cols)


def check_summed_identity(traj):
    """Relative residual of the summed energy balance over the whole trajectory."""
    return traj.ledger.summed_residual()
