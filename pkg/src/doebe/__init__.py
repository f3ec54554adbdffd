"""Dynamic online ensembles of Bayesian basis expansions."""

from .basis import (
    HSGPBasis,
    LinearBasis,
    PolynomialBasis,
    RBFBasis,
    RFFBasis,
    build_hsgp_additive,
    build_linear,
    build_polynomial_additive,
    build_rbf_network,
    build_rff,
    featurize,
)
from .bayes_linear import ExpertModel, GaussianPosterior, init_posterior, log_evidence
from .ensemble import EnsembleState, build_edoebe, ensemble_predict, step
from .kernels import KernelSpec, exact_gp_predict, kernel_eval, spectral_density_1d

__version__ = "0.1.0"

__all__ = [
    "EnsembleState",
    "ExpertModel",
    "GaussianPosterior",
    "HSGPBasis",
    "KernelSpec",
    "LinearBasis",
    "PolynomialBasis",
    "RBFBasis",
    "RFFBasis",
    "build_edoebe",
    "build_hsgp_additive",
    "build_linear",
    "build_polynomial_additive",
    "build_rbf_network",
    "build_rff",
    "ensemble_predict",
    "exact_gp_predict",
    "featurize",
    "init_posterior",
    "kernel_eval",
    "log_evidence",
    "spectral_density_1d",
    "step",
]
