"""Brownian paths with keyed, order-independent randomness.

Every random draw is a pure function of ``(seed, path_id, level)`` and the
position ``n`` within that stream: the stream is a Philox generator keyed
by those three integers. Level 0 holds the coarse increments; level
``k + 1`` holds the Brownian-bridge midpoints that refine a level-``k``
path. Paths can therefore be generated in any order and on any number of
threads with identical results, and refinement reveals one consistent
Brownian path at successively finer resolution.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

# N <= this uses all grid pairs in the Hoelder quotient, else dyadic lags
HOLDER_ALL_PAIRS_MAX = 4096


def keyed_normals(seed, path_id, level, count):
    """``count`` standard normals from the stream keyed by ``(seed, path_id, level)``."""
    ss = np.random.SeedSequence([int(seed), int(path_id), int(level)])
    return np.random.Generator(np.random.Philox(ss)).standard_normal(count)


@dataclass(frozen=True)
class BrownianPath:
    """Values ``W(n dt)``, ``n = 0..N``, of one Brownian path on ``[0, T]``.

    Grid values are the primary data (``values[0] == 0``); increments are
    their differences. ``seed``/``path_id`` are ``None`` for paths that were
    not sampled (e.g. zero paths or sums of paths), which cannot be refined.
    """

    N: int
    T: float
    values: np.ndarray = field(repr=False)
    seed: int = None
    path_id: int = None
    level: int = 0

    def __post_init__(self):
        if self.N < 1 or not self.T > 0:
            raise ValueError(f"need N >= 1 and T > 0, got N={self.N}, T={self.T}")
        if self.values.shape != (self.N + 1,):
            raise ValueError(f"values must have shape ({self.N + 1},)")

    @property
    def dt(self):
        return self.T / self.N

    @property
    def times(self):
        return self.T * np.arange(self.N + 1) / self.N

    @property
    def increments(self):
        return np.diff(self.values)

    def __add__(self, other):
        if (self.N, self.T) != (other.N, other.T):
            raise ValueError("paths live on different grids")
        return BrownianPath(self.N, self.T, self.values + other.values)

    def scaled(self, factor):
        return BrownianPath(self.N, self.T, factor * self.values)

    @classmethod
    def zero(cls, N, T):
        return cls(N, T, np.zeros(N + 1))

    @classmethod
    def from_increments(cls, increments, T):
        inc = np.asarray(increments, dtype=float)
        return cls(inc.size, float(T), np.concatenate([[0.0], np.cumsum(inc)]))

    def coarse_values(self, N):
        """Values on a coarser grid with ``N`` steps (``N`` must divide ``self.N``)."""
        if self.N % N:
            raise ValueError(f"{N} does not divide {self.N}")
        return self.values[::self.N // N]

    def to_csv(self, path):
        """Write columns ``n, t, W``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "t", "W"])
            for n, (t, val) in enumerate(zip(self.times, self.values)):
                w.writerow([n, repr(float(t)), repr(float(val))])


def sample_path(seed, path_id, N, T):
    """Coarse Brownian path: ``N`` independent ``N(0, T/N)`` increments."""
    if N < 1 or not T > 0:
        raise ValueError(f"need N >= 1 and T > 0, got N={N}, T={T}")
    dt = T / N
    inc = np.sqrt(dt) * keyed_normals(seed, path_id, 0, N)
    return BrownianPath(int(N), float(T), np.concatenate([[0.0], np.cumsum(inc)]),
                        int(seed), int(path_id), 0)


def refine_path(path):
    """Halve the step by inserting Brownian-bridge midpoints.

    ``W_mid = (W_left + W_right) / 2 + xi`` with ``xi ~ N(0, dt / 4)``; the
    coarse grid values are copied, so they are preserved bit-exactly.
    """
    if path.seed is None:
        raise ValueError("only sampled paths carry the keys needed for refinement")
    level = path.level + 1
    xi = np.sqrt(path.dt / 4.0) * keyed_normals(path.seed, path.path_id, level, path.N)
    W = path.values
    out = np.empty(2 * path.N + 1)
    out[0::2] = W
    out[1::2] = 0.5 * (W[:-1] + W[1:]) + xi
    return BrownianPath(2 * path.N, path.T, out, path.seed, path.path_id, level)


def refine_to(path, N):
    """Refine repeatedly until the path has ``N`` steps."""
    while path.N < N:
        path = refine_path(path)
    if path.N != N:
        raise ValueError(f"cannot reach N={N} by halving from N={path.N}")
    return path


def holder_quotient(path, exponent=0.25):
    """``max |W(t) - W(s)| / |t - s|**exponent`` over grid pairs ``s != t``.

    All pairs are used for ``N <= 4096``; beyond that only dyadic lags
    ``1, 2, 4, ...`` are scanned.
    """
    W = path.values
    N = path.N
    if N <= HOLDER_ALL_PAIRS_MAX:
        lags = range(1, N + 1)
    else:
        lags = [1 << k for k in range(int(np.log2(N)) + 1)]
    best = 0.0
    for k in lags:
        q = np.max(np.abs(W[k:] - W[:-k])) / (k * path.dt) ** exponent
        best = max(best, float(q))
    return best
