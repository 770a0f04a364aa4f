"""Three-step Lie splitting of the stochastic fluid-structure problem.

One time step ``n -> n + 1`` is

1. structure: implicit wave step for ``(eta, v)``, fluid frozen;
2. stochastic: ``v += W((n+1) dt) - W(n dt)`` on the whole interface;
3. fluid: implicit Stokes step for ``(u, v)`` with ``v`` equal to the trace
   of ``u_r`` on Gamma, ``eta`` frozen.

The order is fixed. ``v^{n+1/3}`` is computed before the increment of step
``n`` is seen, which is what makes the stochastic work term a martingale
increment.

Every routine works on single states (1D coefficient arrays) and on batches
of independent paths (a trailing batch axis on every array).
"""

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from . import energetics
from .assembly import assemble_fluid, fluid_load, interface_load
from .geometry import build_dof_layout, build_meshes
from .linsolve import SaddleSystem, SolverError, factorize_spd

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


class Stage(IntEnum):
    """Sub-step label; whole steps use ``WHOLE`` with the step index."""

    WHOLE = 0
    STRUCTURE = 1
    STOCHASTIC = 2

    @property
    def label(self):
        return ("n", "n+1/3", "n+2/3")[self.value]


class StageError(RuntimeError):
    """A sub-step was applied to a state at the wrong stage."""


class PathFailure(RuntimeError):
    """A step failed; ``column`` is the batch column when it is known."""

    def __init__(self, message, step, column=None):
        super().__init__(message)
        self.step = step
        self.column = column


@dataclass(frozen=True)
class SplitState:
    """Coefficients of all fields at one stage of the scheme.

    ``eta`` and ``v`` live on all interface nodes. ``eta`` is zero at the
    clamped endpoints at every stage; ``v`` is zero there except after the
    stochastic sub-step, where it holds the unconstrained ``v^{n+2/3}``.
    """

    u: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    eta: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    stage: Stage = Stage.WHOLE
    step_index: int = 0

    @property
    def v_free(self):
        return self.v

    @property
    def time_label(self):
        n = self.step_index
        return {Stage.WHOLE: f"{n}", Stage.STRUCTURE: f"{n}+1/3",
                Stage.STOCHASTIC: f"{n}+2/3"}[self.stage]


def _expect(state, stage):
    if state.stage != stage:
        raise StageError(
            f"expected stage {Stage(stage).label}, got {Stage(state.stage).label} "
            f"at step {state.step_index}"
        )


class PressureSignal:
    """Inlet or outlet pressure history ``P(t)``.

    Kinds
    -----
    ``constant``   ``value``
    ``tabulated``  ``times``, ``values``; linear interpolation, constant
                   extension outside the table
    ``sine``       ``mean + amplitude * sin(2 pi t / period)``
    ``pulse``      ``peak / 2 * (1 - cos(2 pi t / duration))`` for
                   ``t < duration``, else 0
    """

    KINDS = {
        "constant": ("value",),
        "tabulated": ("times", "values"),
        "sine": ("mean", "amplitude", "period"),
        "pulse": ("peak", "duration"),
    }

    def __init__(self, kind="constant", **params):
        if kind not in self.KINDS:
            raise ValueError(f"unknown pressure kind {kind!r}")
        missing = set(self.KINDS[kind]) - set(params)
        extra = set(params) - set(self.KINDS[kind])
        if missing or extra:
            raise ValueError(
                f"pressure kind {kind!r} needs {sorted(self.KINDS[kind])}, got {sorted(params)}"
            )
        self.kind = kind
        self.params = params
        if kind == "tabulated":
            t = np.asarray(params["times"], dtype=float)
            y = np.asarray(params["values"], dtype=float)
            if t.ndim != 1 or t.shape != y.shape or t.size < 1 or np.any(np.diff(t) <= 0):
                raise ValueError("tabulated pressure needs increasing times matching values")
            self._t, self._y = t, y
        elif kind == "sine" and not params["period"] > 0:
            raise ValueError("sine period must be positive")
        elif kind == "pulse" and not params["duration"] > 0:
            raise ValueError("pulse duration must be positive")

    @classmethod
    def constant(cls, value):
        return cls("constant", value=float(value))

    @classmethod
    def from_dict(cls, opts):
        opts = dict(opts)
        return cls(opts.pop("kind", "constant"), **opts)

    def to_dict(self):
        out = {"kind": self.kind}
        for k, v in self.params.items():
            out[k] = np.asarray(v).tolist() if isinstance(v, (list, tuple, np.ndarray)) else v
        return out

    @property
    def is_zero(self):
        if self.kind == "constant":
            return self.params["value"] == 0
        if self.kind == "tabulated":
            return not np.any(self._y)
        if self.kind == "sine":
            return self.params["mean"] == 0 and self.params["amplitude"] == 0
        return self.params["peak"] == 0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "constant":
            return np.full_like(t, p["value"])
        if self.kind == "tabulated":
            return np.interp(t, self._t, self._y)
        if self.kind == "sine":
            return p["mean"] + p["amplitude"] * np.sin(2 * np.pi * t / p["period"])
        d = p["duration"]
        return np.where(t < d, 0.5 * p["peak"] * (1 - np.cos(2 * np.pi * t / d)), 0.0)

    def interval_average(self, a, b):
        """Mean of ``P`` over ``[a, b]``."""
        if self.kind == "constant":
            return float(self.params["value"])
        if self.kind == "tabulated":
            inner = self._t[(self._t > a) & (self._t < b)]
            knots = np.concatenate([[a], inner, [b]])
            vals = np.interp(knots, self._t, self._y)
            return float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(knots)) / (b - a))
        if self.kind == "pulse":
            # split at the kink so the Gauss rule sees smooth pieces
            d = self.params["duration"]
            if a < d < b:
                return ((d - a) * self.interval_average(a, d)
                        + (b - d) * self.interval_average(d, b)) / (b - a)
        x = 0.5 * (a + b) + 0.5 * (b - a) * _GL_X
        return float(0.5 * np.sum(_GL_W * self(x)))


def average_pressure(sig, n, dt):
    """``(1/dt) * int_{n dt}^{(n+1) dt} P(t) dt``."""
    return sig.interval_average(n * dt, (n + 1) * dt)


def structure_step(state, dt, M_s, K_s, *, M_sv=None, factor=None):
    """Implicit wave step: ``(M_s + dt^2 K_s) eta' = dt M v + M_s eta``.

    Parameters
    ----------
    state : SplitState at stage ``n``.
    M_s, K_s : interior structure mass and stiffness.
    M_sv : sparse matrix, optional
        Interface mass rows of interior nodes against all nodes, used to
        test ``v^n`` when its endpoint values are nonzero. Without it the
        endpoints of ``v`` must vanish.
    factor : Factorization of ``M_s + dt^2 K_s``, optional.
    """
    _expect(state, Stage.WHOLE)
    eta, v = state.eta, state.v
    if M_sv is None:
        if np.any(v[0]) or np.any(v[-1]):
            raise ValueError("v has nonzero endpoint values; pass M_sv")
        mv = M_s @ v[1:-1]
    else:
        mv = M_sv @ v
    if factor is None:
        factor = factorize_spd(M_s + dt * dt * K_s)
    eta_int = factor.solve(dt * mv + M_s @ eta[1:-1])
    eta_new = np.zeros_like(eta, dtype=float)
    eta_new[1:-1] = eta_int
    v_new = (eta_new - eta) / dt
    return replace(state, eta=eta_new, v=v_new, stage=Stage.STRUCTURE)


def stochastic_step(state, dW):
    """Add the Brownian increment to ``v`` at every interface node."""
    _expect(state, Stage.STRUCTURE)
    return replace(state, v=state.v + np.asarray(dW, dtype=float), stage=Stage.STOCHASTIC)


def fluid_step(state, dt, p_in, p_out, ops, layout, system=None):
    """Implicit Stokes step coupled to ``v`` through the trace of ``u_r``.

    Returns the whole-step state ``n + 1``; ``v^{n+1}`` is copied from the
    ``u_r`` trace DOFs, so the kinematic condition holds bit-exactly.
    """
    _expect(state, Stage.STOCHASTIC)
    if system is None:
        system = SaddleSystem(ops, layout, dt)
    rhs = system.rhs(state.u, state.v, p_in, p_out)
    u, p = system.split(system.solve(rhs))
    v = np.zeros_like(state.v)
    v[layout.interface_interior] = u[layout.trace_dofs]
    return SplitState(u=u, p=p, eta=state.eta, v=v, stage=Stage.WHOLE,
                      step_index=state.step_index + 1)


class Scheme:
    """Operators and factorizations for one ``(mesh, dt)``, reused across steps and paths."""

    def __init__(self, ops, layout, dt, pressure_reg=0.0):
        self.ops = ops
        self.layout = layout
        self.dt = float(dt)
        self.M_sv = ops.M_gamma_int
        self.structure_factor = factorize_spd(ops.M_s + self.dt ** 2 * ops.K_s)
        self.system = SaddleSystem(ops, layout, self.dt, pressure_reg=pressure_reg)

    def structure_step(self, state):
        return structure_step(state, self.dt, self.ops.M_s, self.ops.K_s,
                              M_sv=self.M_sv, factor=self.structure_factor)

    def stochastic_step(self, state, dW):
        return stochastic_step(state, dW)

    def fluid_step(self, state, p_in, p_out):
        return fluid_step(state, self.dt, p_in, p_out, self.ops, self.layout, self.system)

    def full_step(self, state, dW, p_in, p_out):
        """Structure, stochastic, fluid; returns ``(s1, s2, s3)``."""
        s1 = self.structure_step(state)
        s2 = self.stochastic_step(s1, dW)
        s3 = self.fluid_step(s2, p_in, p_out)
        return s1, s2, s3


def full_step(state, scheme, dW, p_in, p_out):
    """One full step; returns the new whole-step state and all stage snapshots."""
    stages = scheme.full_step(state, dW, p_in, p_out)
    return stages[-1], stages


@dataclass
class InitialData:
    """Discrete initial coefficients (already projected)."""

    u: np.ndarray
    eta: np.ndarray
    v: np.ndarray


@dataclass
class Trajectory:
    """Stored result of one path (or a batch of paths along the last axis).

    Whole-step arrays have ``N + 1`` rows (index ``n``); sub-step arrays have
    ``N`` rows (index ``n`` meaning step ``n -> n + 1``). ``u`` at the
    sub-steps equals ``u[n]`` and ``eta`` at ``n+1/3`` and ``n+2/3`` equals
    ``eta[n + 1]``, so they are not stored twice.
    """

    N: int
    T: float
    u: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    eta: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    v13: np.ndarray = field(repr=False)
    v23: np.ndarray = field(repr=False)
    dW: np.ndarray = field(repr=False)
    p_in: np.ndarray = field(repr=False)
    p_out: np.ndarray = field(repr=False)
    ledger: "energetics.EnergyLedger" = field(repr=False)
    ops: object = field(default=None, repr=False)

    @property
    def dt(self):
        return self.T / self.N

    def state(self, n, stage=Stage.WHOLE):
        """Reconstruct the :class:`SplitState` at ``n + stage/3``."""
        stage = Stage(stage)
        if stage == Stage.WHOLE:
            return SplitState(self.u[n], self.p[n], self.eta[n], self.v[n], stage, n)
        v = self.v13[n] if stage == Stage.STRUCTURE else self.v23[n]
        return SplitState(self.u[n], self.p[n], self.eta[n + 1], v, stage, n)

    def stages(self):
        """All stage states in time order."""
        out = []
        for n in range(self.N):
            out += [self.state(n, s) for s in Stage]
        out.append(self.state(self.N))
        return out

    def column(self, b):
        """Single-path view of a batched trajectory."""
        take = lambda a: a[..., b]
        return Trajectory(self.N, self.T, take(self.u), take(self.p), take(self.eta),
                          take(self.v), take(self.v13), take(self.v23), take(self.dW),
                          self.p_in, self.p_out, self.ledger.column(b), self.ops)


class Problem:
    """Meshes, operators and data of one configuration.

    ``config`` is any object with the :class:`~stochfsi.montecarlo.RunConfig`
    fields. Schemes are cached per step count.
    """

    def __init__(self, config):
        self.config = config
        self.fmesh, self.imesh = build_meshes(config.nz, config.nr, config.L, config.R)
        self.layout = build_dof_layout(self.fmesh, self.imesh)
        self.ops = assemble_fluid(self.fmesh, self.imesh, self.layout, config.mu)
        self.p_in_signal = _as_signal(config.pressure_in)
        self.p_out_signal = _as_signal(config.pressure_out)
        self._schemes = {}
        self._initial = None

    def scheme(self, N):
        if N not in self._schemes:
            self._schemes[N] = Scheme(self.ops, self.layout, self.config.T / N,
                                      getattr(self.config, "pressure_regularization", 0.0))
        return self._schemes[N]

    # -- initial data ------------------------------------------------------

    def project_velocity(self, data):
        """L2 projection onto the constrained velocity space.

        ``data`` is a callable ``(z, r) -> (u_z, u_r)`` or a full coefficient
        vector.
        """
        free = self.layout.vel_free
        if callable(data):
            load = fluid_load(self.fmesh, data)
        else:
            load = self.ops.M_f @ np.asarray(data, dtype=float)
        Mff = self.ops.M_f[free][:, free]
        out = np.zeros(self.layout.n_vel)
        out[free] = factorize_spd(Mff).solve(load[free])
        return out

    def project_interface(self, data, clamped):
        """L2 projection onto H_0^1(Gamma) (``clamped``) or the full P2 space."""
        if callable(data):
            load = interface_load(self.imesh, data)
        else:
            load = self.ops.M_gamma @ np.asarray(data, dtype=float)
        out = np.zeros(self.imesh.n_nodes)
        if clamped:
            out[1:-1] = factorize_spd(self.ops.M_s).solve(load[1:-1])
        else:
            out[:] = factorize_spd(self.ops.M_gamma).solve(load)
        return out

    def initial_data(self):
        if self._initial is None:
            self._initial = make_initial_data(self, dict(self.config.initial))
        return self._initial

    def initial_state(self, batch=None):
        d = self.initial_data()
        arrs = [d.u, np.zeros(self.layout.n_pressure), d.eta, d.v]
        if batch is not None:
            arrs = [np.repeat(a[:, None], batch, axis=1) for a in arrs]
        return SplitState(*arrs, stage=Stage.WHOLE, step_index=0)

    # -- time stepping -----------------------------------------------------

    def pressures(self, N):
        dt = self.config.T / N
        p_in = np.array([average_pressure(self.p_in_signal, n, dt) for n in range(N)])
        p_out = np.array([average_pressure(self.p_out_signal, n, dt) for n in range(N)])
        return p_in, p_out

    def run(self, increments, N=None, store=True, initial=None):
        """Advance one path (1D increments) or a batch (shape ``(N, B)``).

        Parameters
        ----------
        increments : ndarray
            Brownian increments, one row per step.
        store : bool
            Keep every stage (``Trajectory``); otherwise only the ledger and
            the final state are returned as ``(ledger, final_state)``.
        initial : SplitState, optional
            Overrides the configured initial data.
        """
        dW = np.asarray(increments, dtype=float)
        N = dW.shape[0] if N is None else N
        if dW.shape[0] != N:
            raise ValueError(f"got {dW.shape[0]} increments for N={N}")
        batch = dW.shape[1] if dW.ndim > 1 else None
        scheme = self.scheme(N)
        ops = self.ops
        p_in, p_out = self.pressures(N)
        state = self.initial_state(batch) if initial is None else initial
        ledger = energetics.LedgerBuilder(ops, scheme.dt, N)
        if store:
            keep = {"u": [state.u], "p": [state.p], "eta": [state.eta], "v": [state.v],
                    "v13": [], "v23": []}
        for n in range(N):
            try:
                s1, s2, s3 = scheme.full_step(state, dW[n], p_in[n], p_out[n])
            except SolverError as exc:
                raise PathFailure(f"step {n}: {exc}", n) from exc
            finite = np.isfinite(s3.u).all(axis=0) & np.isfinite(s3.eta).all(axis=0)
            if not np.all(finite):
                col = int(np.flatnonzero(~np.atleast_1d(finite))[0]) if batch else None
                raise PathFailure(f"step {n}: non-finite state", n, col)
            ledger.record(n, state, s1, s2, s3, dW[n], p_in[n], p_out[n])
            if store:
                keep["u"].append(s3.u)
                keep["p"].append(s3.p)
                keep["eta"].append(s3.eta)
                keep["v"].append(s3.v)
                keep["v13"].append(s1.v)
                keep["v23"].append(s2.v)
            state = s3
        led = ledger.finish()
        if not store:
            return led, state
        stack = {k: np.stack(v) for k, v in keep.items()}
        return Trajectory(N, float(self.config.T), stack["u"], stack["p"], stack["eta"],
                          stack["v"], stack["v13"], stack["v23"], dW, p_in, p_out, led, ops)

    def run_path(self, path, store=True, initial=None):
        """Advance along a :class:`~stochfsi.noise.BrownianPath`."""
        if not math.isclose(path.T, self.config.T, rel_tol=0, abs_tol=1e-14):
            raise ValueError(f"path horizon {path.T} differs from T={self.config.T}")
        amp = getattr(self.config, "noise_amplitude", 1.0)
        return self.run(amp * path.increments, path.N, store=store, initial=initial)


def run_path(config, path):
    """Build the problem for ``config`` and advance it along ``path``."""
    if path.N != config.N:
        raise ValueError(f"path has N={path.N}, config has N={config.N}")
    return Problem(config).run_path(path)


def _as_signal(sig):
    if isinstance(sig, PressureSignal):
        return sig
    if isinstance(sig, (int, float)):
        return PressureSignal.constant(sig)
    return PressureSignal.from_dict(sig)


def make_initial_data(problem, opts):
    """Initial coefficients from a selector dict.

    ``{"kind": "zero"}``
    ``{"kind": "bump", "eta_amplitude": a, "v_amplitude": b, "u_amplitude": c}``
        ``eta0 = a sin(pi z / L)``, ``v0 = b sin(pi z / L)``,
        ``u0 = (c (1 - (r / R)^2), 0)``.
    ``{"kind": "random", "seed": s, "scale": c}``
        Gaussian coefficients on every unconstrained DOF.
    ``{"kind": "file", "path": p}``
        ``.npz`` with arrays ``u``, ``eta``, ``v`` of nodal coefficients.

    Everything except ``random`` goes through the L2 projection.
    """
    kind = opts.pop("kind", "zero")
    lay = problem.layout
    L, R = problem.config.L, problem.config.R
    if kind == "zero":
        _no_extra(kind, opts)
        return InitialData(np.zeros(lay.n_vel), np.zeros(lay.n_interface),
                           np.zeros(lay.n_interface))
    if kind == "bump":
        a = float(opts.pop("eta_amplitude", 0.1))
        b = float(opts.pop("v_amplitude", 0.0))
        c = float(opts.pop("u_amplitude", 0.0))
        _no_extra(kind, opts)
        eta = problem.project_interface(lambda z: a * np.sin(np.pi * z / L), clamped=True)
        v = problem.project_interface(lambda z: b * np.sin(np.pi * z / L), clamped=False)
        u = problem.project_velocity(lambda z, r: (c * (1 - (r / R) ** 2), 0.0 * z))
        return InitialData(u, eta, v)
    if kind == "random":
        seed = int(opts.pop("seed", 0))
        scale = float(opts.pop("scale", 1.0))
        _no_extra(kind, opts)
        rng = np.random.default_rng(seed)
        u = np.zeros(lay.n_vel)
        u[lay.vel_free] = scale * rng.standard_normal(lay.vel_free.size)
        eta = np.zeros(lay.n_interface)
        eta[1:-1] = scale * rng.standard_normal(lay.n_interface - 2)
        v = scale * rng.standard_normal(lay.n_interface)
        return InitialData(u, eta, v)
    if kind == "file":
        path = opts.pop("path")
        _no_extra(kind, opts)
        with np.load(path) as data:
            u, eta, v = (np.asarray(data[k], dtype=float) for k in ("u", "eta", "v"))
        for name, arr, n in (("u", u, lay.n_vel), ("eta", eta, lay.n_interface),
                             ("v", v, lay.n_interface)):
            if arr.shape != (n,):
                raise ValueError(f"initial {name} has shape {arr.shape}, expected ({n},)")
        return InitialData(problem.project_velocity(u),
                           problem.project_interface(eta, clamped=True),
                           problem.project_interface(v, clamped=False))
    raise ValueError(f"unknown initial data kind {kind!r}")


def _no_extra(kind, opts):
    if opts:
        raise ValueError(f"unexpected keys for initial kind {kind!r}: {sorted(opts)}")
