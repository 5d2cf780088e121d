"""Semi-synthetic environments: fitted outcome model, exogenous residuals, counterfactuals."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import ensemble
from .collection import DataCollection, normalize_groups
from .ensemble import FeatureMatrix
from .errors import NumericalError, ValidationError
from .gmrf import GmrfParams, calibrate_rho, estimate_rho, sample_residual_field
from .graph import SpatialGraph, morans_i
from .seeding import derive_seed
from .splitter import SplitParams, TrainValSplit, spatial_split

log = logging.getLogger(__name__)

TRANSFORMS = {
    "none": (lambda y: y, lambda y: y),
    "log1p": (np.log1p, np.expm1),
}


@dataclass(frozen=True)
class EnvConfig:
    collection: str
    treatment: str
    outcome: str
    covariate_groups: dict
    treatment_type: str = "continuous"
    outcome_transform: str = "none"
    grid_size: int | None = None
    seed: int = 0
    split: SplitParams = SplitParams()
    ensemble_grids: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariate_groups", normalize_groups(self.covariate_groups))
        if self.treatment_type not in ("binary", "continuous"):
            raise ValidationError(f"unknown treatment_type {self.treatment_type!r}")
        if self.outcome_transform not in TRANSFORMS:
            raise ValidationError(f"unknown outcome_transform {self.outcome_transform!r}")
        if self.grid_size is None:
            object.__setattr__(self, "grid_size", 2 if self.treatment_type == "binary" else 100)
        if self.treatment_type == "binary" and self.grid_size != 2:
            raise ValidationError("binary treatments use a grid of size 2")
        if self.grid_size < 2:
            raise ValidationError("grid_size must be at least 2")
        cols = self.covariate_columns
        if self.treatment in cols or self.outcome in cols or self.treatment == self.outcome:
            raise ValidationError("treatment, outcome and covariates must be distinct columns")

    @property
    def covariate_columns(self) -> list[str]:
        return [c for cols in self.covariate_groups.values() for c in cols]

    def validate(self, collection: DataCollection) -> None:
        for c in [self.treatment, self.outcome, *self.covariate_columns]:
            if c not in collection.table.columns:
                raise ValidationError(f"column {c!r} not found in the collection")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = {k: v for k, v in d["split"].items() if k != "seed"}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        d = dict(d)
        split = d.pop("split", None) or {}
        return cls(split=SplitParams(**split), **d)


@dataclass(frozen=True, eq=False)
class TreatmentGrid:
    values: np.ndarray
    levels: tuple | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or len(v) < 2 or np.any(np.diff(v) <= 0):
            raise ValidationError("treatment grid must be strictly increasing with >= 2 values")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    def nearest(self, a) -> np.ndarray:
        """Index of the grid value nearest each entry of ``a``."""
        a = np.asarray(a, dtype=float)
        pos = np.searchsorted(self.values, a).clip(1, len(self.values) - 1)
        left = self.values[pos - 1]
        right = self.values[pos]
        return np.where(np.abs(a - left) <= np.abs(right - a), pos - 1, pos)


def binary_levels(treatment) -> tuple[float, float]:
    levels = np.unique(np.asarray(treatment, dtype=float))
    if len(levels) != 2:
        raise ValidationError(f"binary treatment has {len(levels)} observed levels, expected 2")
    return float(levels[0]), float(levels[1])


def make_treatment_grid(treatment, treatment_type: str, size: int = 100) -> TreatmentGrid:
    """``[0, 1]`` for binary treatments; ``size`` quantiles between the 1st and 99th percentile otherwise."""
    a = np.asarray(treatment, dtype=float)
    if treatment_type == "binary":
        return TreatmentGrid(np.array([0.0, 1.0]), binary_levels(a))
    if treatment_type != "continuous":
        raise ValidationError(f"unknown treatment type {treatment_type!r}")
    q = np.quantile(a, np.linspace(0.01, 0.99, size))
    grid = np.unique(q)
    if len(grid) < size:
        distinct = np.unique(a)
        if len(distinct) <= size:
            grid = distinct
        warnings.warn(
            f"continuous treatment grid degraded to {len(grid)} distinct values", stacklevel=2
        )
    return TreatmentGrid(grid)


@dataclass(eq=False)
class SpaceEnv:
    config: EnvConfig
    graph: SpatialGraph
    features: FeatureMatrix
    grid: TreatmentGrid
    observed_outcome: np.ndarray
    synthetic_outcome: np.ndarray
    counterfactuals: np.ndarray
    residuals_empirical: np.ndarray
    residuals_synthetic: np.ndarray
    gmrf: GmrfParams
    gmrf_seed: int
    rho_hat: float
    split: TrainValSplit
    model_summary: dict
    diagnostics: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def treatment_type(self) -> str:
        return self.config.treatment_type

    @property
    def n_nodes(self) -> int:
        return self.graph.n_nodes

    def group_columns(self, group: str) -> list[str]:
        try:
            return list(self.config.covariate_groups[group])
        except KeyError:
            raise ValidationError(f"unknown covariate group {group!r}") from None


def _features(collection: DataCollection, config: EnvConfig) -> tuple[FeatureMatrix, tuple | None]:
    cols = config.covariate_columns
    x = collection.table[cols].to_numpy(dtype=float) if cols else np.empty((collection.graph.n_nodes, 0))
    a = collection.column(config.treatment)
    levels = None
    if config.treatment_type == "binary":
        levels = binary_levels(a)
        a = (a == levels[1]).astype(float)
    return FeatureMatrix(x, a, tuple(cols), config.treatment), levels


def generate_env(collection: DataCollection, config: EnvConfig) -> SpaceEnv:
    """Fit the outcome model, replace its residuals by a CAR draw, and tabulate counterfactuals.

    Binary synthetic outcomes are read off the counterfactual matrix at each
    node's observed level, so the counterfactual at the observed treatment
    reproduces the outcome bit-for-bit.
    """
    config.validate(collection)
    graph = collection.graph
    features, levels = _features(collection, config)
    forward, inverse = TRANSFORMS[config.outcome_transform]
    y_obs = collection.column(config.outcome)
    if config.outcome_transform == "log1p" and np.any(y_obs <= -1):
        raise ValidationError("log1p transform needs outcomes > -1")
    y = forward(y_obs)

    split = spatial_split(graph, replace(config.split, seed=derive_seed(config.seed, "split")))
    model = ensemble.fit_ensemble(
        features, y, split, config.ensemble_grids, seed=derive_seed(config.seed, "ensemble")
    )
    fitted = ensemble.predict(model, features)
    r_hat = y - fitted

    rho_hat = estimate_rho(graph, r_hat)
    car_rho = calibrate_rho(graph, rho_hat, seed=derive_seed(config.seed, "calibrate"))
    gmrf_seed = derive_seed(config.seed, "gmrf")
    r_syn, params = sample_residual_field(graph, car_rho, r_hat, gmrf_seed, return_scale=True)

    grid = make_treatment_grid(features.treatment, config.treatment_type, config.grid_size)
    if levels is not None:
        grid = TreatmentGrid(grid.values, levels)
    cf = ensemble.predict_counterfactuals(model, features, grid.values) + r_syn[:, None]
    if config.treatment_type == "binary":
        y_syn = cf[np.arange(len(cf)), features.treatment.astype(int)]
    else:
        y_syn = fitted + r_syn
    cf = inverse(cf)
    y_syn = inverse(y_syn)
    if not (np.all(np.isfinite(cf)) and np.all(np.isfinite(y_syn))):
        raise NumericalError("non-finite synthetic outcomes")

    env = SpaceEnv(
        config=config,
        graph=graph,
        features=features,
        grid=grid,
        observed_outcome=y_obs,
        synthetic_outcome=y_syn,
        counterfactuals=cf,
        residuals_empirical=r_hat,
        residuals_synthetic=r_syn,
        gmrf=params,
        gmrf_seed=gmrf_seed,
        rho_hat=rho_hat,
        split=split,
        model_summary=model.summary(),
    )
    env.diagnostics = residual_diagnostics(env)
    log.info(
        "env: rho_hat=%.3f car_rho=%.3f Moran emp=%.3f syn=%.3f",
        rho_hat, car_rho, env.diagnostics["moran_empirical"], env.diagnostics["moran_synthetic"],
    )
    return env


def residual_diagnostics(env: SpaceEnv) -> dict:
    """Moran's I, standard deviations and 20-bin histograms of empirical vs synthetic residuals."""
    r_hat, r = env.residuals_empirical, env.residuals_synthetic
    lo = float(min(r_hat.min(), r.min()))
    hi = float(max(r_hat.max(), r.max()))
    edges = np.linspace(lo, hi, 21)
    out = {
        "moran_empirical": morans_i(env.graph, r_hat) if env.graph.n_edges else None,
        "moran_synthetic": morans_i(env.graph, r) if env.graph.n_edges else None,
        "std_empirical": float(r_hat.std()),
        "std_synthetic": float(r.std()),
        "rho_hat": float(env.rho_hat),
        "car_rho": float(env.gmrf.rho),
        "lam": float(env.gmrf.lam),
        "histogram_edges": edges.tolist(),
        "histogram_empirical": np.histogram(r_hat, edges)[0].tolist(),
        "histogram_synthetic": np.histogram(r, edges)[0].tolist(),
        "train_size": int(len(env.split.train)),
        "val_size": int(len(env.split.val)),
    }
    if env.treatment_type == "continuous":
        a = env.features.treatment
        out["max_nearest_grid_gap"] = float(np.max(np.abs(env.grid.values[env.grid.nearest(a)] - a)))
    return out
