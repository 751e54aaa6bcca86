"""Spatial Poisson model of fatigue crack initiation on FEM stress fields."""

from .bayes import PriorBox, mcmc, posterior_summary
from .calibrate import FitResult, aic, mle, profile_likelihood_delta
from .fem import MaterialParams, solve_unit_stress
from .geometry import SpecimenGeometry, build_geometry, mesh_geometry, preset_geometry
from .poisson import (
    Experiment,
    PoissonParams,
    SpecimenCache,
    build_specimen_cache,
    first_crack_density,
    poisson_log_likelihood,
    survival,
)
from .sn import SNParams

__all__ = [
    "Experiment",
    "FitResult",
    "MaterialParams",
    "PoissonParams",
    "PriorBox",
    "SNParams",
    "SpecimenCache",
    "SpecimenGeometry",
    "aic",
    "build_geometry",
    "build_specimen_cache",
    "first_crack_density",
    "mcmc",
    "mesh_geometry",
    "mle",
    "poisson_log_likelihood",
    "posterior_summary",
    "preset_geometry",
    "profile_likelihood_delta",
    "solve_unit_stress",
    "survival",
]
