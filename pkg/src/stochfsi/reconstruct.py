"""Time reconstructions of a discrete trajectory and their exact norms.

Interval ``k`` is ``(k dt, (k + 1) dt]``. On it

* ``lagged``  (lagged-constant) equals ``X^k``,
* ``shifted`` (shifted-constant) equals ``X^{k+1}``,
* ``linear`` interpolates ``X^k`` and ``X^{k+1}``,

and the ``vstar`` field is the lagged-constant function with values
``v^{k+1/3}``. Every reconstruction is linear in time on each interval, so
``L2(0, T; L2)`` norms of differences are integrated exactly: on a piece of
length ``tau`` with end differences ``a`` and ``b``

    int |.|^2 = tau / 3 * (|a|^2 + (a, b) + |b|^2).
"""

from dataclasses import dataclass, field

import numpy as np

KINDS = ("lagged", "shifted", "linear")
FIELDS = ("u", "v", "eta", "vstar")


@dataclass(frozen=True)
class TimeFunction:
    """Piecewise-linear-in-time function with values ``start[k]``/``end[k]`` on interval ``k``.

    Arrays have shape ``(N, n_dof)`` or ``(N, n_dof, batch)``; ``mass`` is the
    spatial Gram matrix used for norms.
    """

    kind: str
    field: str
    T: float
    start: np.ndarray = field(repr=False)
    end: np.ndarray = field(repr=False)
    mass: object = field(repr=False)

    @property
    def N(self):
        return self.start.shape[0]

    @property
    def dt(self):
        return self.T / self.N

    def interval(self, t):
        """Index of the interval ``(k dt, (k+1) dt]`` holding ``t`` (``t = 0`` -> 0)."""
        k = int(np.ceil(t / self.dt - 1e-12)) - 1
        return min(max(k, 0), self.N - 1)

    def __call__(self, t):
        if not 0 <= t <= self.T:
            raise ValueError(f"t={t} outside [0, {self.T}]")
        k = self.interval(t)
        s = (t - k * self.dt) / self.dt
        return self._at(k, s)

    def _at(self, k, s):
        a, b = self.start[k], self.end[k]
        if self.kind == "linear":
            s = np.reshape(s, np.shape(s) + (1,) * (a.ndim - 1)) if np.ndim(s) else s
            return (1 - s) * a + s * b  # exact at both nodes
        return a

    def derivative(self):
        """Time derivative of a linear reconstruction, as a lagged-constant function."""
        if self.kind != "linear":
            raise ValueError("only linear reconstructions have a piecewise derivative")
        d = (self.end - self.start) / self.dt
        return TimeFunction("lagged", f"d{self.field}", self.T, d, d, self.mass)


def make_time_function(traj, field, kind, norm="L2"):
    """Reconstruct ``field`` of ``traj`` in time.

    Parameters
    ----------
    traj : Trajectory
    field : {"u", "v", "eta", "vstar"}
    kind : {"lagged", "shifted", "linear"}
        ``vstar`` only has the lagged kind.
    norm : {"L2", "H1"}
        Spatial norm; ``H1`` (the gradient seminorm) applies to ``eta`` only.
    """
    if field not in FIELDS or kind not in KINDS:
        raise ValueError(f"unknown field/kind {field!r}/{kind!r}")
    if field == "vstar" and kind != "lagged":
        raise ValueError("vstar is defined only as a lagged-constant function")
    ops = traj.ops
    if ops is None:
        raise ValueError("trajectory carries no operators")
    if norm == "H1":
        if field != "eta":
            raise ValueError("the H1 seminorm is only used for eta")
        mass = ops.K_gamma
    elif norm == "L2":
        mass = ops.M_f if field == "u" else ops.M_gamma
    else:
        raise ValueError(f"unknown norm {norm!r}")

    if field == "vstar":
        return TimeFunction(kind, field, traj.T, traj.v13, traj.v13, mass)
    X = getattr(traj, field)
    if kind == "lagged":
        a = b = X[:-1]
    elif kind == "shifted":
        a = b = X[1:]
    else:
        a, b = X[:-1], X[1:]
    return TimeFunction(kind, field, traj.T, a, b, mass)


def _piece_values(f, t0, t1, shift=0.0):
    """Values of ``f(. - shift)`` at both ends of the pieces ``[t0, t1]``.

    Pieces never straddle a breakpoint, so the interval is read off the
    midpoint and the one-sided limits come out right for constant kinds.
    """
    mid = 0.5 * (t0 + t1) - shift
    k = np.clip(np.floor(mid / f.dt).astype(int), 0, f.N - 1)
    a, b = f.start[k], f.end[k]
    if f.kind != "linear":
        return a, a
    extra = (1,) * (a.ndim - 1)
    s0 = ((t0 - shift - k * f.dt) / f.dt).reshape((-1,) + extra)
    s1 = ((t1 - shift - k * f.dt) / f.dt).reshape((-1,) + extra)
    return (1 - s0) * a + s0 * b, (1 - s1) * a + s1 * b


def _breaks(f, shift=0.0):
    return f.T * np.arange(f.N + 1) / f.N + shift


def _integrate(pieces, d0, d1, mass):
    """``sum over pieces of tau / 3 (|d0|^2 + (d0, d1) + |d1|^2)``."""
    t0, t1 = pieces
    tau = (t1 - t0).reshape((-1,) + (1,) * (d0.ndim - 2))
    total = 0.0
    for p in range(d0.shape[0]):
        a, b = d0[p], d1[p]
        Ma, Mb = mass @ a, mass @ b
        q = (np.einsum("i...,i...->...", a, Ma) + np.einsum("i...,i...->...", a, Mb)
             + np.einsum("i...,i...->...", b, Mb))
        total = total + tau[p] * q / 3.0
    return total


def _merged_pieces(points, lo, hi):
    pts = np.unique(np.concatenate([points, [lo, hi]]))
    pts = pts[(pts >= lo) & (pts <= hi)]
    # drop slivers created by round-off in the shifted breakpoints
    keep = np.r_[True, np.diff(pts) > 1e-14 * max(1.0, hi)]
    pts = pts[keep]
    pts[-1] = hi
    return pts[:-1], pts[1:]


def l2_time_norm_diff(f, g, squared=False):
    """Exact ``||f - g||_{L2(0, T; X)}`` for reconstructions on any two grids."""
    if f.T != g.T:
        raise ValueError("time functions live on different horizons")
    if f.start.shape[1:] != g.start.shape[1:]:
        raise ValueError("time functions have different spatial shapes")
    pieces = _merged_pieces(np.concatenate([_breaks(f), _breaks(g)]),
                            0.0, f.T)
    fa, fb = _piece_values(f, *pieces)
    ga, gb = _piece_values(g, *pieces)
    sq = _integrate(pieces, fa - ga, fb - gb, f.mass)
    sq = np.maximum(sq, 0.0)
    return sq if squared else np.sqrt(sq)


def time_shift_modulus(f, h, squared=False):
    """``||f(. - h) - f||_{L2(h, T; X)}``, exact."""
    if not 0 < h < f.T:
        raise ValueError(f"need 0 < h < T, got h={h}")
    pts = np.concatenate([_breaks(f), _breaks(f, h)])
    pieces = _merged_pieces(pts, h, f.T)
    a0, a1 = _piece_values(f, *pieces)
    b0, b1 = _piece_values(f, *pieces, shift=h)
    sq = np.maximum(_integrate(pieces, b0 - a0, b1 - a1, f.mass), 0.0)
    return sq if squared else np.sqrt(sq)


def increment_sum(traj, field, norm="L2"):
    """``dt * sum_n ||X^{n+1} - X^n||^2`` (``vstar``: ``||v^{n+1/3} - v^n||^2``)."""
    ops = traj.ops
    if field == "vstar":
        d = traj.v13 - traj.v[:-1]
        mass = ops.M_gamma
    else:
        X = getattr(traj, field)
        d = X[1:] - X[:-1]
        mass = ops.K_gamma if norm == "H1" else (ops.M_f if field == "u" else ops.M_gamma)
    q = sum(np.einsum("i...,i...->...", d[n], mass @ d[n]) for n in range(d.shape[0]))
    return traj.dt * q
