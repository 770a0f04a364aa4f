"""Path ensembles, expectation estimates and coupled-step convergence studies.

Paths are split into fixed batches of ``batch_size`` consecutive path ids.
The partition does not depend on the thread count, every random number is a
pure function of ``(seed, path_id, level)``, and per-path statistics are
concatenated in path order before any reduction. Reports are therefore
bit-identical for any number of worker threads.
"""

import csv
import datetime
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .energetics import SCHEMA_VERSION
from .noise import HOLDER_ALL_PAIRS_MAX, holder_quotient, refine_to, sample_path
from .reconstruct import l2_time_norm_diff, make_time_function
from .splitting import PathFailure, PressureSignal, Problem

U64_MAX = 2 ** 64 - 1


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class EnsembleFailure(RuntimeError):
    def __init__(self, seed, path_id, step, cause):
        super().__init__(f"path failed (seed={seed}, path_id={path_id}, n={step}): {cause}")
        self.seed, self.path_id, self.step = seed, path_id, step


@dataclass
class RunConfig:
    """Everything that defines a run.

    ``threads`` only affects scheduling; it is kept out of the numerical
    identity of a run (see :meth:`numerical_dict`).
    """

    L: float = 1.0
    R: float = 1.0
    mu: float = 1.0
    T: float = 1.0
    N: int = 16
    nz: int = 8
    nr: int = 8
    n_paths: int = 1000
    seed: int = 0
    pressure_in: PressureSignal = field(default_factory=lambda: PressureSignal.constant(0.0))
    pressure_out: PressureSignal = field(default_factory=lambda: PressureSignal.constant(0.0))
    initial: dict = field(default_factory=lambda: {"kind": "zero"})
    noise_amplitude: float = 1.0
    pressure_regularization: float = 0.0
    batch_size: int = 128
    threads: int = 1
    out_dir: str = None
    trajectory_csv: bool = True

    def __post_init__(self):
        for name in ("L", "R", "mu", "T"):
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(name, f"must be a number, got {val!r}")
            if not math.isfinite(val) or val <= 0:
                raise ConfigError(name, f"must be positive, got {val!r}")
            setattr(self, name, float(val))
        for name, lo in (("N", 1), ("nz", 2), ("nr", 2), ("n_paths", 1), ("batch_size", 1),
                         ("threads", 1)):
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(name, f"must be an integer, got {val!r}")
            if val < lo:
                raise ConfigError(name, f"must be >= {lo}, got {val}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed <= U64_MAX:
            raise ConfigError("seed", f"must be an unsigned 64-bit integer, got {self.seed!r}")
        for name in ("noise_amplitude", "pressure_regularization"):
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
                raise ConfigError(name, f"must be a finite number, got {val!r}")
            setattr(self, name, float(val))
        if self.pressure_regularization < 0:
            raise ConfigError("pressure_regularization", "must be >= 0")
        for name in ("pressure_in", "pressure_out"):
            val = getattr(self, name)
            if not isinstance(val, PressureSignal):
                try:
                    val = (PressureSignal.constant(val) if isinstance(val, (int, float))
                           else PressureSignal.from_dict(val))
                except (TypeError, ValueError) as exc:
                    raise ConfigError(name, str(exc)) from None
                setattr(self, name, val)
        if not isinstance(self.initial, dict) or self.initial.get("kind", "zero") not in (
                "zero", "bump", "random", "file"):
            raise ConfigError("initial", f"unknown initial data selector {self.initial!r}")

    @property
    def dt(self):
        return self.T / self.N

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, data):
        unknown = sorted(set(data) - set(cls.field_names()))
        if unknown:
            raise ConfigError(unknown[0], f"unknown configuration key(s) {unknown}")
        return cls(**data)

    def replace(self, **changes):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return RunConfig(**d)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["pressure_in"] = self.pressure_in.to_dict()
        d["pressure_out"] = self.pressure_out.to_dict()
        d["initial"] = dict(self.initial)
        return d

    def numerical_dict(self):
        """Config without the scheduling and output fields."""
        d = self.to_dict()
        for k in ("threads", "out_dir", "trajectory_csv"):
            d.pop(k)
        return d


def estimate_expectation(samples):
    """Sample mean and standard error ``std / sqrt(n)``.

    numpy's pairwise summation keeps the reduction order fixed.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError(f"need at least 2 samples, got {x.size}")
    mean = float(np.mean(x))
    return mean, float(np.std(x, ddof=1) / math.sqrt(x.size))


def _stat(x):
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 1:
        return {"mean": float(x[0]), "stderr": None, "n_paths": 1}
    m, s = estimate_expectation(x)
    return {"mean": m, "stderr": s, "n_paths": int(x.size)}


def batches(n_paths, batch_size):
    return [range(a, min(a + batch_size, n_paths)) for a in range(0, n_paths, batch_size)]


def _map(func, items, threads):
    if threads <= 1:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def _sample_increments(config, ids, N=None):
    N = config.N if N is None else N
    paths = [sample_path(config.seed, pid, config.N, config.T) for pid in ids]
    if N != config.N:
        paths = [refine_to(p, N) for p in paths]
    return paths


def _run_batch(problem, config, ids, paths, N, store):
    inc = config.noise_amplitude * np.stack([p.increments for p in paths], axis=1)
    try:
        return problem.run(inc, N, store=store)
    except PathFailure as exc:
        pid = ids[exc.column] if exc.column is not None else f"{ids[0]}..{ids[-1]}"
        raise EnsembleFailure(config.seed, pid, exc.step, exc) from exc


@dataclass
class McReport:
    """Ensemble statistics of one configuration.

    ``run_info`` (timestamp, wall clock, threads) is the only part that may
    differ between identical invocations.
    """

    config: RunConfig
    quantities: dict
    residuals: dict
    numerical_dissipation: dict
    holder: dict
    flags: dict
    samples: dict = field(repr=False, default=None)
    run_info: dict = field(default_factory=dict)

    def payload(self):
        """Deterministic part of the report."""
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.numerical_dict(),
            "quantities": self.quantities,
            "residuals": self.residuals,
            "numerical_dissipation": self.numerical_dissipation,
            "holder": self.holder,
            "flags": self.flags,
        }

    def to_dict(self):
        d = self.payload()
        d["run_info"] = self.run_info
        return d

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


PER_PATH = ("max_energy", "energy_initial", "energy_final", "dissipation_sum",
            "dv_structure", "deta_structure", "dv_stochastic", "du_fluid", "dv_fluid",
            "vstar", "stochastic_work", "boundary_work", "res_structure",
            "res_stochastic", "res_fluid", "res_summed", "monotone_violation",
            "holder", "W_T", "noise_sq")


def _path_stats(led, paths):
    nd = led.numerical_dissipation_sums()
    Ew = led.whole_energies
    return {
        "max_energy": led.max_energy(),
        "energy_initial": led.E[0, 0],
        "energy_final": led.E[-1, 3],
        "dissipation_sum": led.dissipation_sum(),
        **nd,
        "vstar": led.vstar_quantity(),
        "stochastic_work": led.stochastic_work.sum(axis=0),
        "boundary_work": led.boundary_work.sum(axis=0),
        "res_structure": led.res_structure.max(axis=0),
        "res_stochastic": led.res_stochastic.max(axis=0),
        "res_fluid": led.res_fluid.max(axis=0),
        "res_summed": led.summed_residual(),
        "monotone_violation": np.max(Ew[1:] - Ew[:-1], axis=0),
        "holder": np.array([holder_quotient(p) for p in paths]),
        "W_T": np.array([p.values[-1] for p in paths]),
        "noise_sq": np.sum(led.dW ** 2, axis=0),
    }


def run_ensemble(config, problem=None, keep_samples=False):
    """Run ``config.n_paths`` paths and summarise them in a :class:`McReport`."""
    t0 = time.perf_counter()
    problem = Problem(config) if problem is None else problem
    problem.scheme(config.N)  # factorize before the workers start

    def work(ids):
        paths = _sample_increments(config, ids)
        led, _ = _run_batch(problem, config, ids, paths, config.N, store=False)
        return _path_stats(led, paths)

    parts = _map(work, batches(config.n_paths, config.batch_size), config.threads)
    s = {k: np.concatenate([np.atleast_1d(p[k]) for p in parts]) for k in PER_PATH}

    quantities = {k: _stat(s[k]) for k in (
        "max_energy", "energy_initial", "energy_final", "dissipation_sum",
        "stochastic_work", "boundary_work", "W_T")}
    LT = config.L * config.T * config.noise_amplitude ** 2
    sd = _stat(s["dv_stochastic"])
    quantities["stochastic_dissipation_sum"] = dict(sd, expected=LT)
    if sd["stderr"] is not None:
        quantities["stochastic_dissipation_sum"]["z_score"] = (
            (sd["mean"] - LT) / sd["stderr"] if sd["stderr"] > 0 else 0.0)
    numdiss = {k: _stat(s[k]) for k in ("dv_structure", "deta_structure", "dv_stochastic",
                                        "du_fluid", "dv_fluid", "vstar")}
    numdiss["N"] = config.N
    residuals = {k: float(np.max(s[k])) for k in ("res_structure", "res_stochastic",
                                                  "res_fluid", "res_summed")}
    holder = dict(_stat(s["holder"]), exponent=0.25, max=float(np.max(s["holder"])),
                  method="all pairs" if config.N <= HOLDER_ALL_PAIRS_MAX else "dyadic lags")
    trivial = bool(not np.any(s["max_energy"]) and not np.any(s["noise_sq"])
                   and not np.any(s["boundary_work"]))
    flags = {
        "trivially_zero_trajectory": trivial,
        "energy_monotone": bool(np.max(s["monotone_violation"]) <= 1e-12),
    }
    info = {
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "wall_clock_s": time.perf_counter() - t0,
        "threads": config.threads,
    }
    return McReport(config, quantities, residuals, numdiss, holder, flags,
                    s if keep_samples else None, info)


@dataclass
class ConvergenceReport:
    """One row per level ``N_l = N * 2**l``, comparing ``N_l`` with ``2 N_l``."""

    config: RunConfig
    rows: list
    run_info: dict = field(default_factory=dict)

    COLUMNS = ("level", "N", "dt", "u_diff_mean", "u_diff_stderr", "v_diff_mean",
               "v_diff_stderr", "eta_diff_mean", "eta_diff_stderr", "vstar_mean",
               "vstar_stderr", "vstar_fine_mean", "vstar_fine_stderr", "vstar_ratio",
               "max_energy_mean", "dissipation_sum_mean")

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def payload(self):
        return {"schema_version": SCHEMA_VERSION, "config": self.config.numerical_dict(),
                "rows": self.rows}

    def to_dict(self):
        d = self.payload()
        d["run_info"] = self.run_info
        return d

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema_version: {SCHEMA_VERSION}\n")
            fh.write(f"# config: {json.dumps(self.config.numerical_dict(), sort_keys=True)}\n")
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r[c] if isinstance(r[c], int) else repr(float(r[c]))
                            for c in self.COLUMNS])


def convergence_study(config, levels, problem=None):
    """Coupled comparison of ``N_l`` and ``2 N_l`` on shared refined Brownian paths.

    Squared ``L2(0, T; L2)`` distances of the lagged-constant reconstructions
    of ``u``, ``v`` and ``eta`` are averaged over ``config.n_paths`` paths.
    """
    if levels < 2:
        raise ValueError(f"levels must be >= 2, got {levels}")
    t0 = time.perf_counter()
    problem = Problem(config) if problem is None else problem
    Ns = [config.N * 2 ** k for k in range(levels + 1)]
    for N in Ns:
        problem.scheme(N)

    def work(ids):
        base = [sample_path(config.seed, pid, config.N, config.T) for pid in ids]
        out = {}
        prev = None
        for k, N in enumerate(Ns):
            paths = [refine_to(p, N) for p in base]
            traj = _run_batch(problem, config, ids, paths, N, store=True)
            out[("vstar", k)] = traj.ledger.vstar_quantity()
            out[("max_energy", k)] = traj.ledger.max_energy()
            out[("dissipation_sum", k)] = traj.ledger.dissipation_sum()
            if prev is not None:
                for fld in ("u", "v", "eta"):
                    out[(fld, k - 1)] = l2_time_norm_diff(
                        make_time_function(prev, fld, "lagged"),
                        make_time_function(traj, fld, "lagged"), squared=True)
            prev = traj
        return out

    parts = _map(work, batches(config.n_paths, config.batch_size), config.threads)
    cat = {key: np.concatenate([np.atleast_1d(p[key]) for p in parts]) for key in parts[0]}
    rows = []
    for k in range(levels):
        N = Ns[k]
        r = {"level": k, "N": N, "dt": config.T / N}
        for fld in ("u", "v", "eta"):
            st = _stat(cat[(fld, k)])
            r[f"{fld}_diff_mean"], r[f"{fld}_diff_stderr"] = st["mean"], _nan(st["stderr"])
        st, sf = _stat(cat[("vstar", k)]), _stat(cat[("vstar", k + 1)])
        r["vstar_mean"], r["vstar_stderr"] = st["mean"], _nan(st["stderr"])
        r["vstar_fine_mean"], r["vstar_fine_stderr"] = sf["mean"], _nan(sf["stderr"])
        r["vstar_ratio"] = sf["mean"] / st["mean"] if st["mean"] else float("nan")
        r["max_energy_mean"] = _stat(cat[("max_energy", k)])["mean"]
        r["dissipation_sum_mean"] = _stat(cat[("dissipation_sum", k)])["mean"]
        rows.append(r)
    info = {"timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "wall_clock_s": time.perf_counter() - t0, "threads": config.threads}
    return ConvergenceReport(config, rows, info)


def _nan(x):
    return float("nan") if x is None else x
