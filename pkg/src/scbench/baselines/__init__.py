"""Reference estimators for spatially confounded benchmarks."""

from .common import weights_matrix
from .dapsm import run_dapsm
from .linear import run_gmerror, run_ols, run_s2sls
from .splines import run_spatial, run_spatialplus
from .tuning import DEFAULT_SPACES, METHODS, EstimatorSpec, run_baseline, tune

__all__ = [
    "DEFAULT_SPACES",
    "METHODS",
    "EstimatorSpec",
    "run_baseline",
    "run_dapsm",
    "run_gmerror",
    "run_ols",
    "run_s2sls",
    "run_spatial",
    "run_spatialplus",
    "tune",
    "weights_matrix",
]
