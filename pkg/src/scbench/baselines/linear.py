"""OLS, spatial two-stage least squares (lag model) and GM spatial-error estimators."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy import optimize
from scipy.sparse import linalg as spla

from ..errors import NumericalError, ValidationError
from ..evaluator import CausalEstimates
from .common import design, least_squares, linear_plugin, weights_matrix


def _binary(dataset) -> bool:
    return dataset.treatment_type == "binary"


def ols_coefficients(dataset) -> np.ndarray:
    return least_squares(design(dataset), dataset.outcome)


def run_ols(dataset) -> CausalEstimates:
    """``Y ~ 1 + A + X``; the ATE is the treatment coefficient."""
    coef = ols_coefficients(dataset)
    z = design(dataset)
    base = z @ coef - coef[1] * dataset.treatment
    return linear_plugin(
        base, coef[1], dataset.grid.values, _binary(dataset),
        ate=float(coef[1]) if _binary(dataset) else None, coef=coef.tolist(),
    )


# -- spatial lag: Y = rho W Y + tau A + X beta + e ------------------------------


def lag_instruments(dataset, w: sp.csr_matrix) -> np.ndarray:
    """``[1, A, X, W[A X], W^2[A X]]`` with all-zero columns dropped."""
    exog = design(dataset)[:, 1:]
    wx = w @ exog
    w2x = w @ wx
    h = np.column_stack([np.ones(dataset.n_nodes), exog, wx, w2x])
    return h[:, np.any(h != 0, axis=0)]


def s2sls_fit(dataset) -> tuple[np.ndarray, float]:
    """Return ``(coef for [1, A, X], rho)``."""
    w = weights_matrix(dataset.graph)
    y = dataset.outcome
    z = design(dataset)
    wy = w @ y
    if not np.any(wy != 0):
        return least_squares(z, y), 0.0
    zz = np.column_stack([z, wy])
    h = lag_instruments(dataset, w)
    if h.shape[1] < zz.shape[1]:
        raise ValidationError(
            f"order condition fails: {h.shape[1]} instruments for {zz.shape[1]} parameters"
        )
    proj, *_ = np.linalg.lstsq(h, zz, rcond=None)
    zhat = h @ proj
    coef, *_ = np.linalg.lstsq(zhat, y, rcond=None)
    if not np.all(np.isfinite(coef)):
        raise NumericalError("two-stage least squares produced non-finite coefficients")
    return coef[:-1], float(coef[-1])


def run_s2sls(dataset) -> CausalEstimates:
    """Lag model by 2SLS; counterfactuals propagate through ``(I - rho W)^{-1}``."""
    coef, rho = s2sls_fit(dataset)
    if abs(rho) >= 1:
        raise NumericalError(f"divergent spatial lag estimate rho={rho:.3f}")
    n = dataset.n_nodes
    w = weights_matrix(dataset.graph)
    z = design(dataset)
    base_rhs = z @ coef - coef[1] * dataset.treatment
    if rho == 0:
        base, mult = base_rhs, np.ones(n)
    else:
        lhs = sp.csc_matrix(sp.identity(n) - rho * w)
        sol = spla.splu(lhs).solve(np.column_stack([base_rhs, np.ones(n)]))
        base, mult = sol[:, 0], sol[:, 1]
    return linear_plugin(base, coef[1] * mult, dataset.grid.values, _binary(dataset), coef=coef.tolist(), rho=rho)


# -- spatial error: Y = 1 c + tau A + X beta + u, u = lambda W u + e ------------


def gm_moments(u: np.ndarray, w: sp.csr_matrix) -> tuple[np.ndarray, np.ndarray]:
    """Moment matrix ``G`` and vector ``g`` with ``g = G [lambda, lambda^2, sigma^2]``."""
    n = len(u)
    ub = w @ u
    ubb = w @ ub
    trww = float((w.multiply(w)).sum())
    g = np.array([u @ u, ub @ ub, u @ ub]) / n
    G = np.array(
        [
            [2 * (u @ ub), -(ub @ ub), n],
            [2 * (ubb @ ub), -(ubb @ ubb), trww],
            [u @ ubb + ub @ ub, -(ub @ ubb), 0.0],
        ]
    ) / n
    return G, g


def estimate_error_lambda(u: np.ndarray, w: sp.csr_matrix) -> float:
    G, g = gm_moments(u, w)
    if not (np.all(np.isfinite(G)) and np.linalg.matrix_rank(G) == 3):
        raise NumericalError("singular moment system")

    def resid(p):
        lam, s2 = p
        return g - G @ np.array([lam, lam**2, s2])

    s2_0 = max(float(g[0]), 1e-12)
    fit = optimize.least_squares(resid, x0=[0.0, s2_0], bounds=([-0.99, 0.0], [0.99, np.inf]))
    if not fit.success:
        raise NumericalError(f"moment estimation failed: {fit.message}")
    return float(fit.x[0])


def gmerror_fit(dataset, lambda_e: float | None = None) -> tuple[np.ndarray, float]:
    w = weights_matrix(dataset.graph)
    y = dataset.outcome
    z = design(dataset)
    u = y - z @ least_squares(z, y)
    lam = estimate_error_lambda(u, w) if lambda_e is None else float(lambda_e)
    ys = y - lam * (w @ y)
    zs = z - lam * (w @ z)
    if np.linalg.matrix_rank(zs) < zs.shape[1]:
        raise NumericalError("spatially filtered design is rank deficient")
    return least_squares(zs, ys), lam


def run_gmerror(dataset, lambda_e: float | None = None) -> CausalEstimates:
    """Kelejian-Prucha moments for the error lag, then feasible GLS on filtered data."""
    coef, lam = gmerror_fit(dataset, lambda_e)
    z = design(dataset)
    base = z @ coef - coef[1] * dataset.treatment
    return linear_plugin(
        base, coef[1], dataset.grid.values, _binary(dataset),
        ate=float(coef[1]) if _binary(dataset) else None, coef=coef.tolist(), lambda_e=lam,
    )
