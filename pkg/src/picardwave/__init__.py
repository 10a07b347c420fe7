"""Diagonal-wavefront parallel Picard sampling.

Two engines share the same wave schedule: an Euler-Picard sampler for
strongly log-concave targets and an exponential-integrator sampler for
SDE diffusion-model inference, each with an exact sequential fine-grid
oracle, closed-form Gaussian diagnostics, and adaptive-round
accounting.
"""

from .rng import (RngStream, BrownianTable, XiTable, make_rng,
                  standard_normal_vec, build_brownian_table, build_xi_table,
                  zero_brownian_table, zero_xi_table, dump_table,
                  load_brownian_table, load_xi_table)
from .schedule import (DiscretizationScheme, WavefrontSchedule, ParamSet,
                       DiffusionConstants, uniform_scheme, diffusion_scheme,
                       validate_scheme, wavefront, grid_index,
                       select_logconcave_params, check_logconcave_params,
                       select_diffusion_params)
from .targets import (LogConcaveTarget, DiffusionDataModel, ScoreOracle,
                      ZeroScoreOracle, PerturbationField, gaussian_target,
                      gaussian_data_model, mixture_data_model, grad_potential,
                      potential, backward_score, marginal_log_density,
                      mode_concentrated_init, perturbed_oracle)
from .metrics import (GaussianFit, fit_gaussian, gaussian_kl, gaussian_w2,
                      pinsker_tv_bound, talagrand_w2_bound, sliced_w2)
from .harness import (ExperimentConfig, SweepSpec, ConfigError,
                      run_experiment, run_sweep, write_sweep_csv,
                      core_limited_rounds, target_from_spec, model_from_spec)
from . import engine_logconcave, engine_diffusion, reports

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
