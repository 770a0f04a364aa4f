"""Named invariant checks behind ``stochfsi verify``.

Each check returns a :class:`CheckResult`; the suite passes iff every check
does. Checks share one :class:`Problem` and one ensemble run of the given
configuration.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.interpolate import BSpline

from .energetics import quad
from .geometry import GAMMA
from .montecarlo import run_ensemble
from .noise import refine_path, refine_to, sample_path
from .reconstruct import increment_sum, l2_time_norm_diff, make_time_function
from .splitting import Problem, SplitState, Stage

STEP_TOL = 1e-8
SUMMED_TOL = 1e-7


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "value": float(self.value),
                "tolerance": float(self.tolerance), "detail": self.detail}


def divergence_free_velocity(fmesh, rng):
    """Random exactly divergence-free velocity in the constrained Q2 space.

    ``u = (d_r psi, -d_z psi)`` for a C1 biquadratic spline stream function
    ``psi`` with knots at the element boundaries. Its derivatives are
    continuous and piecewise Q2, so nodal interpolation is exact. The
    coefficient constraints give ``u_z = 0`` on Gamma and ``u_r = 0`` on the
    other three sides.
    """
    nz, nr = fmesh.nz, fmesh.nr
    tz = np.r_[[0.0] * 2, np.linspace(0, fmesh.L, nz + 1), [fmesh.L] * 2]
    tr = np.r_[[0.0] * 2, np.linspace(0, fmesh.R, nr + 1), [fmesh.R] * 2]
    C = rng.standard_normal((nz + 2, nr + 2))
    C[:, 0] = C[0, 0]          # psi constant on r = 0
    C[0, :] = C[1, :]          # d_z psi = 0 on z = 0
    C[-1, :] = C[-2, :]        # d_z psi = 0 on z = L
    C[:, -1] = C[:, -2]        # d_r psi = 0 on r = R
    z = np.unique(fmesh.nodes[:, 0])
    r = np.unique(fmesh.nodes[:, 1])
    bz = BSpline(tz, np.eye(nz + 2), 2)
    br = BSpline(tr, np.eye(nr + 2), 2)
    Bz, dBz = bz(z), bz.derivative()(z)
    Br, dBr = br(r), br.derivative()(r)
    uz = Bz @ C @ dBr.T        # [i, j] at node (z_i, r_j)
    ur = -(dBz @ C @ Br.T)
    return np.concatenate([uz.T.ravel(), ur.T.ravel()])


class Suite:
    def __init__(self, config, problem=None, report=None):
        self.config = config
        self.problem = Problem(config) if problem is None else problem
        self._report = report

    @property
    def report(self):
        if self._report is None:
            self._report = run_ensemble(self.config, self.problem, keep_samples=True)
        return self._report

    @property
    def ops(self):
        return self.problem.ops

    @property
    def layout(self):
        return self.problem.layout

    def path(self, pid, N=None):
        c = self.config
        return sample_path(c.seed, pid, c.N if N is None else N, c.T)

    # -- checks ------------------------------------------------------------

    def mesh_invariants(self):
        fm, im = self.problem.fmesh, self.problem.imesh
        top = fm.boundary_nodes(GAMMA)
        ok = np.array_equal(fm.nodes[top, 0], im.nodes)
        corners = [len(fm.vertex_tags(v)) for v in fm.corner_vertices]
        ok &= corners == [2, 2, 2, 2]
        ident = self.layout.identification
        ok &= len(ident) == 2 * fm.nz - 1
        ok &= not set(ident.values()) & set(self.layout.vel_constrained.tolist())
        n_bdry = sum(1 for v in range(fm.n_vertices) if fm.vertex_tags(v))
        ok &= n_bdry == 2 * (fm.nz + fm.nr)
        return ok, 0.0, 0.0, f"{len(ident)} identified trace DOFs, {n_bdry} boundary vertices"

    def operator_symmetry(self):
        o = self.ops
        mats = [o.M_f, o.A_visc, o.lap, o.M_gamma, o.K_gamma, o.M_s, o.K_s]
        worst = max(abs(m - m.T).max() if (m - m.T).nnz else 0.0 for m in mats)
        return worst == 0.0, worst, 0.0, "max |A - A^T| over the symmetric operators"

    def mass_patch(self):
        o, c = self.ops, self.config
        err = max(abs(o.M_f.sum() - 2 * c.L * c.R) / (c.L * c.R),
                  abs(o.M_gamma.sum() - c.L) / c.L,
                  abs(o.ones_gamma.sum() - c.L) / c.L)
        return err <= 1e-12, err, 1e-12, "mass sums reproduce the measures"

    def korn_equality(self):
        rng = np.random.default_rng(self.config.seed)
        o = self.ops
        worst = 0.0
        for _ in range(100):
            u = divergence_free_velocity(self.problem.fmesh, rng)
            lhs = quad(o.A_visc, u) / o.mu
            rhs = quad(o.lap, u)
            worst = max(worst, abs(lhs - rhs) / abs(rhs))
        return worst <= 1e-12, worst, 1e-12, "100 random divergence-free constrained fields"

    def saddle_manufactured(self):
        sysm = self.problem.scheme(self.config.N).system
        rng = np.random.default_rng(self.config.seed + 1)
        x = rng.standard_normal(sysm.size)
        got = sysm.solve(sysm.matrix @ x)
        err = np.linalg.norm(got - x) / np.linalg.norm(x)
        return err <= 1e-10, err, 1e-10, "recover a random target from its rhs"

    def flux_balance(self):
        sch = self.problem.scheme(self.config.N)
        lay = self.layout
        zero = SplitState(np.zeros(lay.n_vel), np.zeros(lay.n_pressure),
                          np.zeros(lay.n_interface), np.zeros(lay.n_interface), Stage.STOCHASTIC)
        s = sch.fluid_step(zero, 1.0, 1.0)
        o = self.ops
        fin, fout = o.b_in @ s.u, o.b_out @ s.u
        fgam = o.ones_gamma @ s.v
        scale = max(abs(fin), 1e-300)
        err = max(abs(fin + fout), abs(-fin + fout + fgam)) / scale
        return err <= 1e-10 and abs(fin) > 0, err, 1e-10, f"inflow {fin:.3e}, wall flux {fgam:.3e}"

    def kinematic_coupling(self):
        tr = self.problem.run_path(self.path(0))
        lay = self.layout
        ok = np.array_equal(tr.u[1:, lay.trace_dofs], tr.v[1:, 1:-1]) and not np.any(tr.v[1:, [0, -1]])
        return ok, 0.0, 0.0, "u_r trace equals v bitwise at every whole step n >= 1"

    def structure_identity(self):
        v = self.report.residuals["res_structure"]
        return v <= STEP_TOL, v, STEP_TOL, f"max over {self.config.n_paths} paths"

    def stochastic_identity(self):
        v = self.report.residuals["res_stochastic"]
        return v <= STEP_TOL, v, STEP_TOL, f"max over {self.config.n_paths} paths"

    def fluid_identity(self):
        v = self.report.residuals["res_fluid"]
        return v <= STEP_TOL, v, STEP_TOL, f"max over {self.config.n_paths} paths"

    def summed_identity(self):
        v = self.report.residuals["res_summed"]
        return v <= SUMMED_TOL, v, SUMMED_TOL, f"max over {self.config.n_paths} paths"

    def dissipativity(self):
        c = self.config
        worst = -np.inf
        for s in range(10):
            cfg = c.replace(noise_amplitude=0.0, pressure_in=0.0, pressure_out=0.0,
                            initial={"kind": "random", "seed": s})
            pb = Problem(cfg)
            led, _ = pb.run(np.zeros(c.N), store=False)
            E = led.whole_energies
            worst = max(worst, float(np.max(E[1:] - E[:-1])))
        return worst <= 1e-12, worst, 1e-12, "max E^{n+1} - E^n, 10 random initial data, W = P = 0"

    def superposition(self):
        pb = self.problem
        w1, w2 = self.path(0), self.path(1)
        t0 = pb.run(np.zeros(self.config.N))
        t1, t2 = pb.run_path(w1), pb.run_path(w2)
        t12 = pb.run_path(w1 + w2)
        o = self.ops
        worst = 0.0
        for fld, M in (("u", o.M_f), ("v", o.M_gamma), ("eta", o.M_gamma)):
            a = [getattr(t, fld) for t in (t12, t1, t2, t0)]
            d = a[0] - a[1] - a[2] + a[3]
            worst = max(worst, max(np.sqrt(max(quad(M, d[n]), 0.0)) for n in range(d.shape[0])))
        return worst <= 1e-9, worst, 1e-9, "sup_n L2 norm of the affine defect"

    def adaptedness(self):
        c = self.config
        n0 = c.N // 2
        inc1 = self.path(0).increments
        inc2 = inc1.copy()
        inc2[n0:] = self.path(1).increments[n0:]
        a, b = self.problem.run(inc1), self.problem.run(inc2)
        ok = (np.array_equal(a.u[:n0 + 1], b.u[:n0 + 1]) and np.array_equal(a.v[:n0 + 1], b.v[:n0 + 1])
              and np.array_equal(a.eta[:n0 + 2], b.eta[:n0 + 2])
              and np.array_equal(a.v13[:n0 + 1], b.v13[:n0 + 1])
              and not np.array_equal(a.v23[n0], b.v23[n0]))
        return ok, 0.0, 0.0, f"paths agree through step {n0}; stages up to v^({n0}+1/3) identical"

    def brownian_variance(self):
        p = sample_path(self.config.seed, 2 ** 32, 100_000, 1.0)
        var = float(np.var(p.increments, ddof=1))
        err = abs(var / p.dt - 1)
        return err <= 0.05, err, 0.05, "relative error of the increment variance, 1e5 increments"

    def brownian_ks(self):
        c = self.config
        w = np.array([sample_path(c.seed, pid, c.N, c.T).values[-1] for pid in range(10_000)])
        pv = stats.kstest(w / np.sqrt(c.T), "norm").pvalue
        return pv >= 1e-3, pv, 1e-3, "KS p-value of W(T)/sqrt(T), 1e4 paths"

    def bridge_consistency(self):
        p = self.path(0)
        once = refine_path(refine_path(p))
        direct = refine_to(p, 4 * p.N)
        ok = (np.array_equal(once.values, direct.values)
              and np.array_equal(once.values[::4], p.values)
              and np.array_equal(refine_path(p).values[::2], p.values))
        return ok, 0.0, 0.0, "coarse grid values preserved bitwise under refinement"

    def stochastic_dissipation_expectation(self):
        q = self.report.quantities["stochastic_dissipation_sum"]
        if q["stderr"] is None:
            return False, float("nan"), 4.0, "needs at least 2 paths"
        z = abs(q["mean"] - q["expected"]) / q["stderr"] if q["stderr"] > 0 else 0.0
        return z <= 4.0, z, 4.0, f"mean {q['mean']:.4f} vs L T = {q['expected']:.4f} (|z|)"

    def reconstruction_identities(self):
        tr = self.problem.run_path(self.path(0))
        worst = 0.0
        ok = True
        for fld in ("u", "v", "eta"):
            lag = make_time_function(tr, fld, "lagged")
            s = increment_sum(tr, fld)
            eq = l2_time_norm_diff(make_time_function(tr, fld, "shifted"), lag, squared=True)
            lin = l2_time_norm_diff(make_time_function(tr, fld, "linear"), lag, squared=True)
            worst = max(worst, abs(eq - s) / max(s, 1e-300))
            ok &= lin <= s * (1 + 1e-10)
        vs = l2_time_norm_diff(make_time_function(tr, "v", "lagged"),
                               make_time_function(tr, "vstar", "lagged"), squared=True)
        s = increment_sum(tr, "vstar")
        worst = max(worst, abs(vs - s) / max(s, 1e-300))
        d = make_time_function(tr, "eta", "linear").derivative()
        ok &= np.array_equal(d.start, tr.v13)
        return ok and worst <= 1e-10, worst, 1e-10, "shift/lag equalities, linear bounds, d/dt eta_bar = v*"

    CHECKS = ("mesh_invariants", "operator_symmetry", "mass_patch", "korn_equality",
              "saddle_manufactured", "flux_balance", "kinematic_coupling",
              "structure_identity", "stochastic_identity", "fluid_identity",
              "summed_identity", "dissipativity", "superposition", "adaptedness",
              "brownian_variance", "brownian_ks", "bridge_consistency",
              "stochastic_dissipation_expectation", "reconstruction_identities")

    def run(self, names=None):
        out = []
        for name in names or self.CHECKS:
            try:
                passed, value, tol, detail = getattr(self, name)()
            except Exception as exc:  # a crashing check is a failing check
                passed, value, tol, detail = False, float("nan"), float("nan"), f"error: {exc}"
            out.append(CheckResult(name, bool(passed), float(value), float(tol), detail))
        return out


def run_suite(config, names=None):
    return Suite(config).run(names)


def format_table(results):
    w = max(len(r.name) for r in results)
    lines = [f"{'check':<{w}}  result  {'value':>11}  {'tolerance':>9}  detail"]
    for r in results:
        lines.append(f"{r.name:<{w}}  {'PASS' if r.passed else 'FAIL':<6}  {r.value:11.3e}  "
                     f"{r.tolerance:9.1e}  {r.detail}")
    n_pass = sum(r.passed for r in results)
    lines.append(f"{n_pass}/{len(results)} checks passed")
    return "\n".join(lines)
