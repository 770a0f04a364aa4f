"""
Energy budget of one stochastic path
====================================

Advance a single path on the default 8x8 mesh and look at where the energy
goes at each sub-step of the splitting.
"""

import numpy as np

from stochfsi import Problem, RunConfig, check_summed_identity, sample_path

# A membrane bump at rest, a pulsating inlet pressure and unit noise.
cfg = RunConfig(N=32, initial={"kind": "bump", "eta_amplitude": 0.1},
                pressure_in={"kind": "sine", "mean": 1.0, "amplitude": 0.5, "period": 0.5})
problem = Problem(cfg)
traj = problem.run_path(sample_path(cfg.seed, 0, cfg.N, cfg.T))
led = traj.ledger

# E[n, i] is the energy after stage i of step n (0 = start of step).
print(" n      E^n     structure   noise kick     fluid      D^n")
for n in range(0, cfg.N, 4):
    e = led.E[n]
    print(f"{n:2d} {e[0]:10.5f} {e[1] - e[0]:+10.2e} {e[2] - e[1]:+10.2e} "
          f"{e[3] - e[2]:+10.2e} {led.D[n]:9.2e}")

# The structure and fluid sub-steps only lose energy (plus boundary work);
# the noise kick injects 1/2 dW^2 L on average.
print("total noise-kick energy:", float(np.sum(led.E[:, 2] - led.E[:, 1])))
print("0.5 * L * sum dW^2      :", 0.5 * cfg.L * float(np.sum(led.dW ** 2)))

# Everything balances to round-off once the numerical dissipation is counted.
print("summed identity residual:", check_summed_identity(traj))
for name, val in led.numerical_dissipation_sums().items():
    print(f"  {name:>16s} {val:.3e}")
