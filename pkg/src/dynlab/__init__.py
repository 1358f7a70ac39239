"""Simulation and verification of stochastic inertial dynamics for convex
minimization and monotone equations."""

from .errors import *  # noqa: F401,F403
from .problems import (MonotoneProblem, ObjectiveProblem, VerificationReport,
                       gradient_as_operator, make_bilinear_saddle, make_quadratic,
                       make_rotation, verify_problem)
from .schedules import DiffusionSchedule, ScalarSchedule
from .dynamics import (SystemSpec, ValidationReport, Variant, build_savd, build_sfogda_alt,
                       build_shbf, build_shbfop_alt, quadratic_form_sign, recover_velocity,
                       validate_operator_assumptions, validate_shbf_assumption)
from .sde import (BatchTrajectory, BrownianPath, Trajectory, coarsen_path, integrate_em,
                  integrate_em_batch, integrate_rk4, sample_brownian, stability_hint,
                  uniform_grid, zero_path)
from .diagnostics import (EnsembleStats, MetricSeries, RateFit, compute_metrics,
                          energy_shbf, energy_shbfop, fit_power_law, fit_rate,
                          martingale_mean_check, run_ensemble, scaled_phi)
from .rescaling import (EquivalenceReport, TimeMap, check_equivalence, couple_increments,
                        image_of, make_time_map, refinement_study, transform_diffusion)
from .config import ExperimentConfig, parse_config

__version__ = "0.1.0"
