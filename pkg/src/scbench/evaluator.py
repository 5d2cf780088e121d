"""Ground-truth effects and normalized error metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass
class CausalEstimates:
    """Estimated ATE, ERF over the treatment grid, and/or n x |grid| counterfactuals.

    Rows of ``ite`` may be NaN for units an estimator leaves unestimated
    (e.g. unmatched units under matching).
    """

    ate: float | None = None
    erf: np.ndarray | None = None
    ite: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.erf is not None:
            self.erf = np.asarray(self.erf, dtype=float)
        if self.ite is not None:
            self.ite = np.asarray(self.ite, dtype=float)
        if self.ate is not None:
            self.ate = float(self.ate)


@dataclass(frozen=True)
class EvalReport:
    sigma_y: float
    bias: float | None = None
    rmise: float | None = None
    pehe: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def sigma_y(outcome) -> float:
    """Population (divide-by-n) standard deviation of the synthetic outcome."""
    return float(np.std(np.asarray(outcome, dtype=float)))


def true_ate(dataset) -> float:
    if dataset.treatment_type != "binary":
        raise ValidationError("the ATE is defined for binary treatments only")
    cf = dataset.counterfactuals
    return float(np.mean(cf[:, 1] - cf[:, 0]))


def true_erf(dataset) -> np.ndarray:
    return dataset.counterfactuals.mean(axis=0)


def eval_report(estimates: CausalEstimates, dataset) -> EvalReport:
    """Errors normalized by the synthetic outcome's standard deviation.

    ``pehe`` is averaged over the rows of ``estimates.ite`` that are fully
    finite.
    """
    s = sigma_y(dataset.outcome)
    if not s > 0:
        raise ValidationError("synthetic outcome has zero variance")
    if estimates.ate is None and estimates.erf is None and estimates.ite is None:
        raise ValidationError("no estimates provided")
    n, k = dataset.counterfactuals.shape
    bias = rmise = pehe = None
    if estimates.ate is not None:
        bias = abs(estimates.ate - true_ate(dataset)) / s
    if estimates.erf is not None:
        if estimates.erf.shape != (k,):
            raise ValidationError(f"erf has shape {estimates.erf.shape}, expected ({k},)")
        rmise = float(np.sqrt(np.mean((estimates.erf - true_erf(dataset)) ** 2)) / s)
    if estimates.ite is not None:
        if estimates.ite.shape != (n, k):
            raise ValidationError(f"ite has shape {estimates.ite.shape}, expected ({n}, {k})")
        rows = np.all(np.isfinite(estimates.ite), axis=1)
        if not rows.any():
            raise ValidationError("ite estimate has no finite rows")
        diff = dataset.counterfactuals[rows] - estimates.ite[rows]
        pehe = float(np.sqrt(np.mean(diff**2)) / s)
    return EvalReport(sigma_y=s, bias=bias, rmise=rmise, pehe=pehe)
