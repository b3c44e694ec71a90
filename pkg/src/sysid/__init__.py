"""Identification of offset linear systems from biased observations.

Estimators work on pairwise differences of observations, which cancel a
constant observation bias, and come with sample-complexity bounds and a
loop that checks the bounds' sufficient conditions.
"""
from ._kernels import BACKEND
from .complexity import (ComplexityConfig, SpectralBounds, bound_report, check_conditions,
                         epsilon_opt, exact_bounds, expected_diff_moment, gamma_and_M, l_up,
                         m_lo, norm_only_bounds)
from .data import (IndexFamily, build_matrices, chain_family, classify, full_family,
                   star_family)
from .errors import (ConfigError, NumericalError, ParseError, SchemaError, SysIdError)
from .estimators import (InferenceResult, feasibility_report, model_error, naive_infer,
                         proposed_infer, raw_ols)
from .experiments import ExperimentSpec, preset_spec, run_experiment, run_pac_demo
from .pac import BoundsProvider, PacLimits, PacOutcome, PacRequest, epsilon_rho_grid, run_pac
from .selection import SelectionResult, objective, select
from .simulation import (DistributionSpec, LinearSystem, NoiseModel, Trajectory, noise_preset,
                         scaled_system, simulate, simulate_trials, system_preset)
from .trajectory_io import load_trajectory, save_trajectory

__version__ = "0.1.0"
