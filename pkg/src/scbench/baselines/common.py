from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import NumericalError
from ..evaluator import CausalEstimates
from ..graph import SpatialGraph


def weights_matrix(graph: SpatialGraph) -> sp.csr_matrix:
    """Row-normalized binary adjacency; isolated rows stay zero."""
    deg = graph.degree.astype(float)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return sp.csr_matrix(sp.diags(inv) @ graph.adjacency)


def design(dataset, treatment=None) -> np.ndarray:
    """``[1, A, X]`` with ``A`` replaced by ``treatment`` when given."""
    a = dataset.treatment if treatment is None else treatment
    n = dataset.n_nodes
    return np.column_stack([np.ones(n), a, dataset.covariates])


def least_squares(z: np.ndarray, y: np.ndarray, ridge: float = 1e-8) -> np.ndarray:
    """OLS coefficients; a tiny ridge on non-intercept columns if ``z`` is rank deficient."""
    scale = z.std(axis=0)
    scale[scale == 0] = 1.0
    zs = z / scale
    if np.linalg.matrix_rank(zs) == z.shape[1]:
        coef, *_ = np.linalg.lstsq(z, y, rcond=None)
        return coef
    penalty = np.full(z.shape[1], ridge * len(y))
    penalty[0] = 0.0
    gram = zs.T @ zs + np.diag(penalty)
    try:
        coef = np.linalg.solve(gram, zs.T @ y)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("design matrix is singular even with ridge fallback") from exc
    return coef / scale


def penalized_least_squares(
    z: np.ndarray, basis: np.ndarray, y: np.ndarray, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    """Minimize ``|y - z b - B g|^2 / n + lam |g|^2``; ``z`` is unpenalized."""
    n, k = basis.shape
    aug = np.block([[z, basis], [np.zeros((k, z.shape[1])), np.sqrt(n * lam) * np.eye(k)]])
    rhs = np.concatenate([y, np.zeros(k)])
    coef, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    return coef[: z.shape[1]], coef[z.shape[1] :]


def linear_plugin(base: np.ndarray, slope, grid: np.ndarray, binary: bool, ate=None, **extras) -> CausalEstimates:
    """Estimates for counterfactuals ``base + slope * a`` over the grid."""
    slope = np.broadcast_to(np.asarray(slope, dtype=float), base.shape)
    ite = base[:, None] + slope[:, None] * grid[None, :]
    erf = ite.mean(axis=0)
    if binary and ate is None:
        ate = float(erf[1] - erf[0])
    return CausalEstimates(ate=ate if binary else None, erf=erf, ite=ite, extras=extras)
