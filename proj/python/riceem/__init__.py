"""Rician diffusion-tensor estimation with Poisson-augmented EM."""

from ._core import (
    Acceleration,
    BaselineReport,
    FitOptions,
    FitReport,
    Scheme,
    TensorOrder,
    Truth,
    augmented_expectation,
    bessel_ratio_i1_i0,
    default_scheme,
    fit_ls,
    fit_map,
    fit_mle,
    fit_rician_direct,
    fit_wls,
    fixture_truth,
    log_bessel_i0,
    make_scheme,
    marginal_loglik,
    mean_diffusivity,
    rician_log_density,
    run_cli,
    sample_rician,
    synthesize,
)

__all__ = [
    "Acceleration",
    "BaselineReport",
    "FitOptions",
    "FitReport",
    "Scheme",
    "TensorOrder",
    "Truth",
    "augmented_expectation",
    "bessel_ratio_i1_i0",
    "default_scheme",
    "fit_ls",
    "fit_map",
    "fit_mle",
    "fit_rician_direct",
    "fit_wls",
    "fixture_truth",
    "log_bessel_i0",
    "make_scheme",
    "marginal_loglik",
    "mean_diffusivity",
    "rician_log_density",
    "run_cli",
    "sample_rician",
    "synthesize",
]
