"""Hyperparameter search for the baselines.

All methods except DAPSm are tuned on outcome-prediction MSE over a
spatially split validation set; DAPSm is tuned on post-matching covariate
balance. After tuning, the estimator is refit on all nodes.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from ..seeding import derive_seed, stream
from ..splitter import SplitParams, spatial_split
from . import dapsm, linear, splines

log = logging.getLogger(__name__)

METHODS = ("ols", "s2sls", "gmerror", "spatial", "spatialplus", "dapsm")

DEFAULT_SPACES: dict[str, dict] = {
    "ols": {},
    "s2sls": {},
    "gmerror": {},
    "spatial": {"lam": ("loguniform", 1e-5, 1.0)},
    "spatialplus": {"lam_t": ("loguniform", 1e-5, 1.0), "lam_y": ("loguniform", 1e-5, 1.0)},
    "dapsm": {
        "penalty_value": ("choice", [0.001, 0.01, 0.1, 1.0]),
        "penalty_type": ("choice", ["l1", "l2"]),
        "spatial_weight": ("uniform", 0.0, 0.1),
    },
}
DEFAULT_BUDGET = {"spatial": 20, "spatialplus": 30, "dapsm": 40}


@dataclass
class EstimatorSpec:
    method: str
    space: dict | None = None
    budget: int | None = None
    seed: int = 0
    split: SplitParams = SplitParams()
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.space is None:
            self.space = DEFAULT_SPACES[self.method]
        if self.budget is None:
            self.budget = DEFAULT_BUDGET.get(self.method, 1)
        if self.budget < 1:
            raise ValidationError("tuning budget must be >= 1")


def candidates(space: dict, budget: int, seed: int) -> list[dict]:
    """Full grid when every dimension is a choice, otherwise ``budget`` random draws."""
    for name, dist in space.items():
        if dist[0] == "choice" and len(dist[1]) == 0:
            raise ValidationError(f"empty search space for {name!r}")
        if dist[0] not in ("choice", "uniform", "loguniform"):
            raise ValidationError(f"unknown distribution {dist[0]!r} for {name!r}")
    if not space:
        return [{}]
    names = list(space)
    if all(space[k][0] == "choice" for k in names):
        return [dict(zip(names, vals)) for vals in itertools.product(*(space[k][1] for k in names))]
    rng = stream(seed, "tune")
    out = []
    for _ in range(budget):
        point = {}
        for k in names:
            kind, *args = space[k]
            if kind == "choice":
                point[k] = args[0][int(rng.integers(len(args[0])))]
            elif kind == "uniform":
                point[k] = float(rng.uniform(args[0], args[1]))
            else:
                point[k] = float(np.exp(rng.uniform(np.log(args[0]), np.log(args[1]))))
        out.append(point)
    return out


def validation_mse(method: str, dataset, params: dict, split, seed: int = 0) -> float:
    tr, va = split.train, split.val
    y = dataset.outcome
    if method == "spatial":
        fit = splines.SpatialFit(dataset, params["lam"], rows=tr, seed=seed)
    elif method == "spatialplus":
        fit = splines.SpatialPlusFit(dataset, params["lam_t"], params["lam_y"], rows=tr, seed=seed)
    else:
        raise ValidationError(f"no validation objective for {method!r}")
    return float(np.mean((fit.predict(va) - y[va]) ** 2))


def tune(spec: EstimatorSpec, dataset) -> dict:
    """Best point of ``spec.space`` for ``dataset``; deterministic given ``spec.seed``."""
    points = candidates(spec.space, spec.budget, spec.seed)
    if len(points) == 1:
        return points[0]
    if spec.method == "dapsm":
        def objective(p):
            return dapsm.balance(dataset, seed=spec.seed, **spec.options, **p)
    else:
        split = spatial_split(dataset.graph, SplitParams(
            spec.split.alpha, spec.split.levels, spec.split.buffer, derive_seed(spec.seed, "tune-split")
        ))

        def objective(p):
            return validation_mse(spec.method, dataset, p, split, seed=spec.seed)
    scores = [objective(p) for p in points]
    best = int(np.argmin(scores))
    log.debug("%s tuning: best %s (objective %.4g)", spec.method, points[best], scores[best])
    return points[best]


def run_method(method: str, dataset, params: dict, seed: int = 0, **options):
    if method == "ols":
        return linear.run_ols(dataset)
    if method == "s2sls":
        return linear.run_s2sls(dataset)
    if method == "gmerror":
        return linear.run_gmerror(dataset, **options)
    if method == "spatial":
        return splines.run_spatial(dataset, params["lam"], seed=seed)
    if method == "spatialplus":
        return splines.run_spatialplus(dataset, params["lam_t"], params["lam_y"], seed=seed)
    if method == "dapsm":
        return dapsm.run_dapsm(dataset, seed=seed, **options, **params)
    raise ValidationError(f"unknown method {method!r}")


def run_baseline(spec: EstimatorSpec, dataset):
    """Tune, then refit on all nodes. Returns ``(estimates, chosen params)``."""
    params = tune(spec, dataset)
    est = run_method(spec.method, dataset, params, seed=spec.seed, **spec.options)
    est.extras["hyperparameters"] = params
    return est, params
