"""
Monte Carlo ensemble
====================

The mean of the stochastic numerical dissipation is exactly L*T, which makes
it a good sanity check for an ensemble run.
"""

from stochfsi import RunConfig, run_ensemble

cfg = RunConfig(N=16, n_paths=2000, threads=4)
rep = run_ensemble(cfg)

for name, q in rep.quantities.items():
    line = f"{name:>28s}  {q['mean']:.5f}"
    if q["stderr"] is not None:
        line += f" +- {q['stderr']:.5f}"
    print(line)

sd = rep.quantities["stochastic_dissipation_sum"]
print(f"expected {sd['expected']}, z-score {sd['z_score']:+.2f}")
print("worst identity residual:", max(rep.residuals.values()))
print(f"{rep.run_info['wall_clock_s']:.1f} s on {rep.run_info['threads']} threads")
