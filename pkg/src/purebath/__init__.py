"""Conditional dynamics of a thermally damped bosonic mode whose bath is
monitored through a (partially) purified two-mode environment.

The package provides three mutually validating views of the same physics:
closed-form steady-state analytics (:mod:`purebath.analytics`), the
conditional Gaussian-moment integrator (:mod:`purebath.moments`), and a
truncated-Fock-space density-operator oracle (:mod:`purebath.fock`),
plus reproducible Monte Carlo ensembles (:mod:`purebath.ensemble`) and a
CLI (``purebath``).
"""

from .analytics import (
    BathParams,
    UnravellingCoefficients,
    compute_coefficients,
    gamma_threshold,
    min_variance_over_N,
    squeezing_bound,
    steady_state_purity,
    steady_state_variance,
)
from .ensemble import EnsembleError, EnsembleStats, run_ensemble
from .fock import (
    FockDensityMatrix,
    PositivityError,
    SuperoperatorTerms,
    TruncationWarning,
    default_dim,
    evolve_conditional,
    evolve_lindblad,
    lindblad_step,
    moments_from_rho,
    sme_step_correlated,
    sme_step_uncorrelated,
    thermal_state,
    trace_distance,
    trace_formula_check,
)
from .moments import (
    CovariancePath,
    GaussianMoments,
    NonconvergenceWarning,
    SimConfig,
    StepSizeError,
    TrajectoryRecord,
    integrate_covariance,
    simulate_trajectory,
    unconditional_moment_step,
    variance_drift,
)
from .noise import NoiseStream, generate_increments

__version__ = "0.1.0"

__all__ = [
    "BathParams",
    "UnravellingCoefficients",
    "compute_coefficients",
    "steady_state_variance",
    "squeezing_bound",
    "gamma_threshold",
    "min_variance_over_N",
    "steady_state_purity",
    "GaussianMoments",
    "SimConfig",
    "TrajectoryRecord",
    "CovariancePath",
    "StepSizeError",
    "NonconvergenceWarning",
    "unconditional_moment_step",
    "variance_drift",
    "integrate_covariance",
    "simulate_trajectory",
    "FockDensityMatrix",
    "SuperoperatorTerms",
    "TruncationWarning",
    "PositivityError",
    "default_dim",
    "thermal_state",
    "lindblad_step",
    "evolve_lindblad",
    "sme_step_uncorrelated",
    "sme_step_correlated",
    "evolve_conditional",
    "moments_from_rho",
    "trace_formula_check",
    "trace_distance",
    "NoiseStream",
    "generate_increments",
    "EnsembleError",
    "EnsembleStats",
    "run_ensemble",
    "__version__",
]
