"""Validation-weighted ensemble approximating ``E[Y | X, A]``.

Three base families (ridge on pairwise interactions, gradient-boosted trees,
k-nearest neighbors) are each tuned on the validation nodes after fitting on
the training nodes only. Blend weights come from nonnegative least squares of
the validation outcome on the base validation predictions.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy.optimize import nnls
from sklearn.ensemble import HistGradientBoostingRegressor
from sklearn.linear_model import Ridge
from sklearn.neighbors import KNeighborsRegressor
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import PolynomialFeatures, StandardScaler

from .errors import NumericalError, ValidationError
from .splitter import TrainValSplit

log = logging.getLogger(__name__)

DEFAULT_GRIDS: dict[str, list[dict[str, Any]]] = {
    "ridge": [{"alpha": a} for a in (1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2)],
    "gbt": [
        {"max_depth": d, "n_rounds": r, "learning_rate": 0.1}
        for d, r in itertools.product((2, 3, 4), (100, 300))
    ],
    "knn": [{"k": k} for k in (5, 15, 50)],
}

MIN_VAL = 10


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Covariates ``X`` (n x p) plus one treatment column ``A``, rows aligned to a graph."""

    covariates: np.ndarray
    treatment: np.ndarray
    covariate_names: tuple[str, ...]
    treatment_name: str = "treatment"

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        a = np.asarray(self.treatment, dtype=float)
        names = tuple(self.covariate_names)
        if x.shape[1] != len(names):
            raise ValidationError(f"{x.shape[1]} covariate columns but {len(names)} names")
        if len(set(names) | {self.treatment_name}) != len(names) + 1:
            raise ValidationError("column names must be unique")
        if a.shape != (x.shape[0],):
            raise ValidationError("treatment length does not match covariate rows")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(a))):
            raise ValidationError("features contain missing or non-finite values")
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "treatment", a)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n_rows(self) -> int:
        return len(self.treatment)

    @property
    def schema(self) -> tuple[tuple[str, ...], str]:
        return self.covariate_names, self.treatment_name

    def design(self) -> np.ndarray:
        return np.column_stack([self.covariates, self.treatment])

    def with_treatment(self, value) -> "FeatureMatrix":
        a = np.broadcast_to(np.asarray(value, dtype=float), self.treatment.shape).copy()
        return replace(self, treatment=a)

    def drop(self, names) -> "FeatureMatrix":
        names = set(names)
        keep = [k for k, c in enumerate(self.covariate_names) if c not in names]
        return replace(
            self,
            covariates=self.covariates[:, keep],
            covariate_names=tuple(self.covariate_names[k] for k in keep),
        )

    def rows(self, idx) -> "FeatureMatrix":
        return replace(self, covariates=self.covariates[idx], treatment=self.treatment[idx])


def make_estimator(family: str, params: dict, seed: int):
    if family == "ridge":
        return make_pipeline(
            StandardScaler(),
            PolynomialFeatures(degree=2, interaction_only=True, include_bias=False),
            Ridge(alpha=params["alpha"]),
        )
    if family == "gbt":
        return HistGradientBoostingRegressor(
            max_depth=params["max_depth"],
            max_iter=params["n_rounds"],
            learning_rate=params.get("learning_rate", 0.1),
            max_leaf_nodes=None,
            early_stopping=False,
            random_state=seed % (2**32),
        )
    if family == "knn":
        return make_pipeline(StandardScaler(), KNeighborsRegressor(n_neighbors=params["k"]))
    raise ValidationError(f"unknown base family {family!r}")


@dataclass(eq=False)
class BaseModel:
    family: str
    params: dict
    estimator: Any
    val_mse: float

    def predict(self, design: np.ndarray) -> np.ndarray:
        return self.estimator.predict(design)


@dataclass(eq=False)
class EnsembleModel:
    base_models: list[BaseModel]
    weights: np.ndarray
    schema: tuple[tuple[str, ...], str]
    val_mse: float = float("nan")
    tuning_log: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "families": [m.family for m in self.base_models],
            "hyperparameters": [m.params for m in self.base_models],
            "weights": [float(w) for w in self.weights],
            "validation_mse": {m.family: float(m.val_mse) for m in self.base_models},
            "ensemble_validation_mse": float(self.val_mse),
            "covariates": list(self.schema[0]),
            "treatment": self.schema[1],
        }


def _check_schema(model: EnsembleModel, features: FeatureMatrix) -> None:
    if features.schema != model.schema:
        raise ValidationError(
            f"feature schema {features.schema} does not match training schema {model.schema}"
        )


def predict(model: EnsembleModel, features: FeatureMatrix) -> np.ndarray:
    """Weighted sum of base-model predictions."""
    _check_schema(model, features)
    design = features.design()
    out = np.zeros(features.n_rows)
    for m, w in zip(model.base_models, model.weights):
        if w > 0:
            out += w * m.predict(design)
    return out


def residuals(model: EnsembleModel, features: FeatureMatrix, outcome) -> np.ndarray:
    y = np.asarray(outcome, dtype=float)
    return y - predict(model, features)


def predict_counterfactuals(model: EnsembleModel, features: FeatureMatrix, grid) -> np.ndarray:
    """``n x len(grid)`` matrix of predictions with the treatment set to each grid value."""
    grid = np.asarray(grid, dtype=float)
    n = features.n_rows
    stacked = FeatureMatrix(
        np.tile(features.covariates, (len(grid), 1)),
        np.repeat(grid, n),
        features.covariate_names,
        features.treatment_name,
    )
    return predict(model, stacked).reshape(len(grid), n).T


def blend_weights(val_preds: np.ndarray, y_val: np.ndarray) -> np.ndarray:
    """NNLS weights of ``y_val`` on the columns of ``val_preds``, renormalized to sum 1.

    Falls back to all weight on the lowest-MSE column if NNLS returns zeros.
    """
    w, _ = nnls(val_preds, y_val)
    if w.sum() <= 0:
        w = np.zeros(val_preds.shape[1])
        w[np.argmin(((val_preds - y_val[:, None]) ** 2).mean(axis=0))] = 1.0
    return w / w.sum()


def fit_ensemble(
    features: FeatureMatrix,
    outcome,
    split: TrainValSplit,
    grids: dict[str, list[dict]] | None = None,
    seed: int = 0,
) -> EnsembleModel:
    """Tune each base family on validation MSE, then blend.

    Base models are fit on the training nodes only; validation outcomes
    influence only the hyperparameter choice and the blend weights.
    """
    y = np.asarray(outcome, dtype=float)
    if y.shape != (features.n_rows,) or not np.all(np.isfinite(y)):
        raise ValidationError("outcome must be a finite vector aligned to the features")
    if np.ptp(y) == 0:
        raise ValidationError("outcome is constant")
    if len(split.val) < MIN_VAL:
        raise ValidationError(f"validation set has {len(split.val)} nodes, need >= {MIN_VAL}")
    grids = DEFAULT_GRIDS if grids is None else grids
    design = features.design()
    x_tr, y_tr = design[split.train], y[split.train]
    x_va, y_va = design[split.val], y[split.val]

    chosen: list[BaseModel] = []
    tuning_log = []
    for family, grid in grids.items():
        best = None
        for params in grid:
            if family == "knn" and params["k"] > len(y_tr):
                continue
            est = make_estimator(family, params, seed).fit(x_tr, y_tr)
            mse = float(np.mean((est.predict(x_va) - y_va) ** 2))
            tuning_log.append({"family": family, "params": dict(params), "val_mse": mse})
            if best is None or mse < best.val_mse:
                best = BaseModel(family, dict(params), est, mse)
        if best is not None:
            chosen.append(best)
    if not chosen:
        raise ValidationError("no base model could be fit")
    val_preds = np.column_stack([m.predict(x_va) for m in chosen])
    if not np.all(np.isfinite(val_preds)):
        raise NumericalError("non-finite base-model predictions")
    weights = blend_weights(val_preds, y_va)
    val_mse = float(np.mean((val_preds @ weights - y_va) ** 2))
    log.debug("ensemble weights %s, validation MSE %.4g", weights, val_mse)
    return EnsembleModel(chosen, weights, features.schema, val_mse, tuning_log)
