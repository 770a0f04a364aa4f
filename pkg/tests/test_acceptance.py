"""Acceptance criteria, one test per criterion.

Each test prints a single ``[criterion k] PASS|FAIL`` line; the lines are
collected and repeated in the terminal summary.
"""

import json
import time

import numpy as np
import pytest
from scipy import stats

from stochfsi import cli
from stochfsi.montecarlo import RunConfig, convergence_study, run_ensemble
from stochfsi.noise import sample_path
from stochfsi.reconstruct import increment_sum, l2_time_norm_diff, make_time_function
from stochfsi.splitting import Problem
from stochfsi.verify import Suite

RESULTS = []

FORCED = dict(initial={"kind": "bump", "eta_amplitude": 0.1, "v_amplitude": 0.2,
                       "u_amplitude": 0.3},
              pressure_in={"kind": "sine", "mean": 1.0, "amplitude": 0.5, "period": 0.5},
              pressure_out=0.25)


def record(k, ok, detail):
    line = f"[criterion {k:2d}] {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    RESULTS.append(line)
    return ok


@pytest.fixture(scope="module")
def coupled():
    """Coupled study N = 8, 16, 32, 64 on an 8x8 mesh, 200 shared paths."""
    cfg = RunConfig(N=8, n_paths=200, seed=0, batch_size=50, threads=4)
    return convergence_study(cfg, levels=3)


def test_c01_pathwise_identities():
    t0 = time.perf_counter()
    worst = {"res_structure": 0.0, "res_stochastic": 0.0, "res_fluid": 0.0, "res_summed": 0.0}
    for seed in range(10):
        cfg = RunConfig(N=16, n_paths=1, seed=seed,
                        **dict(FORCED, initial={"kind": "random", "seed": seed}))
        rep = run_ensemble(cfg)
        for key in worst:
            worst[key] = max(worst[key], rep.residuals[key])
    wall = time.perf_counter() - t0
    step = max(worst["res_structure"], worst["res_stochastic"], worst["res_fluid"])
    ok = step <= 1e-8 and worst["res_summed"] <= 1e-7 and wall <= 30
    assert record(1, ok, f"step residual {step:.2e} <= 1e-8, summed {worst['res_summed']:.2e}"
                         f" <= 1e-7, {wall:.1f} s <= 30 s")


def test_c02_stochastic_dissipation_expectation():
    t0 = time.perf_counter()
    rep = run_ensemble(RunConfig(L=1.0, T=1.0, N=16, n_paths=10_000, seed=0, threads=4))
    wall = time.perf_counter() - t0
    q = rep.quantities["stochastic_dissipation_sum"]
    z = abs(q["mean"] - 1.0) / q["stderr"]
    ok = z <= 4.0 and wall <= 300
    assert record(2, ok, f"mean {q['mean']:.5f} +- {q['stderr']:.5f}, |z| = {z:.2f} <= 4,"
                         f" {wall:.1f} s")


def test_c03_brownian_law():
    p = sample_path(0, 0, 100_000, 1.0)
    rel = abs(np.var(p.increments, ddof=1) / p.dt - 1)
    w = np.array([sample_path(0, pid, 16, 1.0).values[-1] for pid in range(10_000)])
    pv = stats.kstest(w, "norm").pvalue
    ok = rel <= 0.05 and pv >= 1e-3
    assert record(3, ok, f"variance rel. error {rel:.4f} <= 0.05, KS p = {pv:.3f} >= 1e-3")


def test_c04_dissipativity():
    passed, val, tol, _ = Suite(RunConfig(N=16)).dissipativity()
    assert record(4, passed, f"max E^(n+1) - E^n = {val:.2e} <= {tol:.0e} over 10 seeds")


def test_c05_superposition():
    passed, val, tol, _ = Suite(RunConfig(N=16, **FORCED)).superposition()
    assert record(5, passed, f"affine defect {val:.2e} <= {tol:.0e}")


def test_c06_vstar_scaling(coupled):
    r = coupled.column("vstar_ratio")[:2]
    ok = bool(np.all((r >= 0.35) & (r <= 0.75)))
    assert record(6, ok, f"ratios 8->16 {r[0]:.3f}, 16->32 {r[1]:.3f} in [0.35, 0.75]"
                         f" ({coupled.config.n_paths} paths)")


def test_c07_cauchy_monotone(coupled):
    d = coupled.column("u_diff_mean")
    ok = bool(np.all(np.diff(d) < 0))
    assert record(7, ok, "E|u_N - u_2N|^2 for N = 8, 16, 32: "
                         + ", ".join(f"{x:.3e}" for x in d))


def test_c08_uniform_bounds(coupled):
    rows = {r["N"]: r for r in coupled.rows}
    rel = {}
    for key in ("max_energy_mean", "dissipation_sum_mean"):
        a, b = rows[16][key], rows[32][key]
        rel[key] = abs(a - b) / max(abs(a), abs(b))
    ok = max(rel.values()) <= 0.5
    assert record(8, ok, f"N=16 vs 32 relative gap: E[max E] {rel['max_energy_mean']:.3f},"
                         f" sum E[D] {rel['dissipation_sum_mean']:.3f} <= 0.5")


def test_c09_korn():
    passed, val, tol, _ = Suite(RunConfig()).korn_equality()
    assert record(9, passed, f"max relative error {val:.2e} <= {tol:.0e} on 100 fields")


def test_c10_reconstruction():
    pb = Problem(RunConfig(N=16, **FORCED))
    tr = pb.run_path(sample_path(0, 0, 16, 1.0))
    worst = 0.0
    for fld in ("u", "v", "eta"):
        s = increment_sum(tr, fld)
        eq = l2_time_norm_diff(make_time_function(tr, fld, "shifted"),
                               make_time_function(tr, fld, "lagged"), squared=True)
        worst = max(worst, abs(eq - s) / s)
    s = increment_sum(tr, "vstar")
    eq = l2_time_norm_diff(make_time_function(tr, "v", "lagged"),
                           make_time_function(tr, "vstar", "lagged"), squared=True)
    worst = max(worst, abs(eq - s) / s)
    d = make_time_function(tr, "eta", "linear").derivative()
    coef = float(np.max(np.abs(d.start - tr.v13)))
    ok = worst <= 1e-10 and coef == 0.0 and np.array_equal(d.end, d.start)
    assert record(10, ok, f"identity error {worst:.2e} <= 1e-10, d/dt eta_bar - v* = {coef:.1e}")


def _outputs(cmd, tmp_path, threads, extra):
    out = tmp_path / f"{cmd}-{threads}"
    cfgfile = tmp_path / "cfg.json"
    cfgfile.write_text(json.dumps({"n_paths": 64, "batch_size": 8, "N": 8}))
    code = cli.main([cmd, "--config", str(cfgfile), "--seed", "7", "--threads", str(threads),
                     "--out", str(out)] + extra)
    blobs = {}
    for f in sorted(out.iterdir()):
        if f.suffix == ".json":
            d = json.loads(f.read_text())
            d.pop("run_info", None)
            blobs[f.name] = json.dumps(d, sort_keys=True)
        else:
            blobs[f.name] = f.read_text()
    return code, blobs


def test_c11_reproducibility(tmp_path):
    same = True
    for cmd, extra in (("verify", []), ("run", []), ("converge", ["--levels", "2"])):
        ref = _outputs(cmd, tmp_path, 1, extra)
        for th in (4, 8):
            same &= _outputs(cmd, tmp_path, th, extra) == ref
    assert record(11, same, "verify/run/converge outputs identical for threads 1, 4, 8")
