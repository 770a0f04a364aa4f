"""Stochastic fluid-structure interaction: Stokes flow coupled to a noisy membrane.

A Taylor-Hood finite element discretisation in space and a three-step Lie
splitting in time (structure, stochastic kick, fluid), with exact discrete
energy bookkeeping and Monte Carlo drivers.
"""

from .assembly import FluidOperators, assemble_fluid, assemble_structure
from .energetics import (EnergyLedger, check_step_identity, check_summed_identity,
                         discrete_dissipation, discrete_energy)
from .geometry import DofLayout, FluidMesh, InterfaceMesh, build_dof_layout, build_meshes
from .linsolve import Factorization, SaddleSystem, SolverError, factorize_spd, solve_saddle
from .montecarlo import (ConfigError, ConvergenceReport, McReport, RunConfig,
                         convergence_study, estimate_expectation, run_ensemble)
from .noise import BrownianPath, holder_quotient, refine_path, sample_path
from .reconstruct import TimeFunction, l2_time_norm_diff, make_time_function, time_shift_modulus
from .splitting import (PressureSignal, Problem, SplitState, Stage, StageError, Trajectory,
                        average_pressure, fluid_step, full_step, run_path, stochastic_step,
                        structure_step)

__version__ = "0.1.0"
