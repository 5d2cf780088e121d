"""Masked benchmark datasets with smoothness and confounding scores."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import ensemble
from .ensemble import FeatureMatrix
from .env import SpaceEnv, TreatmentGrid
from .errors import ValidationError
from .evaluator import sigma_y
from .graph import SpatialGraph, morans_i
from .seeding import derive_seed, stream

ESTIMANDS = ("ate", "erf", "ite")


@dataclass(eq=False)
class SpaceDataset:
    """One benchmark unit: observed covariates (anonymized), treatment, outcome, truth."""

    covariates: np.ndarray
    covariate_names: tuple[str, ...]
    treatment: np.ndarray
    outcome: np.ndarray
    counterfactuals: np.ndarray
    grid: TreatmentGrid
    graph: SpatialGraph
    treatment_type: str
    smoothness_score: float | None = None
    confounding_scores: dict = field(default_factory=dict)
    masked_group_id: str = ""

    def __post_init__(self):
        if not sigma_y(self.outcome) > 0:
            raise ValidationError("synthetic outcome has zero variance")

    @property
    def n_nodes(self) -> int:
        return len(self.treatment)

    @property
    def coords(self) -> np.ndarray | None:
        return self.graph.coords


@dataclass
class ScoreRecord:
    group: str
    smoothness: float
    confounding: dict
    classification: dict = field(default_factory=dict)


def masked_group_token(env: SpaceEnv, group: str | None) -> str:
    h = hashlib.sha256(f"{env.config.seed}|{sorted(env.config.covariate_groups)}|{group}".encode())
    return h.hexdigest()[:12]


def anonymization_map(env: SpaceEnv, group: str | None) -> dict[str, str]:
    """``{anonymous name: original column}`` for the covariates left after masking ``group``."""
    masked = set(env.group_columns(group)) if group is not None else set()
    keep = [c for c in env.features.covariate_names if c not in masked]
    order = stream(env.config.seed, "anonymize", group).permutation(len(keep))
    return {f"X{k + 1}": keep[j] for k, j in enumerate(order)}


def make_dataset(env: SpaceEnv, group: str | None, *, scores: bool = True) -> SpaceDataset:
    """Drop ``group``'s columns, anonymize the rest, and attach scores.

    ``group=None`` yields the unmasked dataset (all covariates observed).
    """
    if group is not None:
        env.group_columns(group)
    name_map = anonymization_map(env, group)
    if not name_map:
        raise ValidationError("masking would remove every covariate")
    index = {c: k for k, c in enumerate(env.features.covariate_names)}
    cols = [index[name_map[f"X{k + 1}"]] for k in range(len(name_map))]
    ds = SpaceDataset(
        covariates=env.features.covariates[:, cols],
        covariate_names=tuple(name_map),
        treatment=env.features.treatment.copy(),
        outcome=env.synthetic_outcome,
        counterfactuals=env.counterfactuals,
        grid=env.grid,
        graph=env.graph,
        treatment_type=env.treatment_type,
        masked_group_id=masked_group_token(env, group),
    )
    if scores and group is not None:
        ds.smoothness_score = smoothness_score(env, group)
        ds.confounding_scores = confounding_scores(env, group)
    elif group is None:
        ds.confounding_scores = {e: 0.0 for e in applicable_estimands(env)}
    return ds


def smoothness_score(env: SpaceEnv, group: str) -> float:
    """Mean Moran's I over the group's columns, skipping constant ones."""
    values = []
    for c in env.group_columns(group):
        x = env.features.covariates[:, env.features.covariate_names.index(c)]
        if np.ptp(x) > 0:
            values.append(morans_i(env.graph, x))
    if not values:
        raise ValidationError(f"every column of group {group!r} is constant")
    return float(np.mean(values))


def applicable_estimands(env: SpaceEnv) -> tuple[str, ...]:
    return ESTIMANDS if env.treatment_type == "binary" else ("erf", "ite")


def _plugin_estimates(env: SpaceEnv, drop: tuple[str, ...]) -> dict:
    key = ("plugin", drop)
    if key in env._cache:
        return env._cache[key]
    feats: FeatureMatrix = env.features.drop(drop)
    model = ensemble.fit_ensemble(
        feats,
        env.synthetic_outcome,
        env.split,
        env.config.ensemble_grids,
        seed=derive_seed(env.config.seed, "ensemble"),
    )
    ite = ensemble.predict_counterfactuals(model, feats, env.grid.values)
    erf = ite.mean(axis=0)
    out = {"ite": ite, "erf": erf, "val_mse": model.val_mse}
    if env.treatment_type == "binary":
        out["ate"] = float(erf[1] - erf[0])
    env._cache[key] = out
    return out


def confounding_scores(env: SpaceEnv, group: str | None) -> dict[str, float]:
    """Normalized change in plug-in ensemble estimates when ``group`` is masked."""
    drop = tuple(env.group_columns(group)) if group is not None else ()
    full = _plugin_estimates(env, ())
    masked = _plugin_estimates(env, drop)
    s = sigma_y(env.synthetic_outcome)
    out = {
        "erf": float(np.sqrt(np.mean((full["erf"] - masked["erf"]) ** 2)) / s),
        "ite": float(np.sqrt(np.mean((full["ite"] - masked["ite"]) ** 2)) / s),
    }
    if env.treatment_type == "binary":
        out = {"ate": abs(full["ate"] - masked["ate"]) / s, **out}
    return out


def confounding_score(env: SpaceEnv, group: str | None, estimand: str) -> float:
    if estimand not in ESTIMANDS:
        raise ValidationError(f"unknown estimand {estimand!r}")
    if estimand == "ate" and env.treatment_type != "binary":
        raise ValidationError("the ATE confounding score needs a binary treatment")
    return confounding_scores(env, group)[estimand]


def masked_fit_mse(env: SpaceEnv, group: str | None) -> float:
    """Validation MSE of the ensemble refit with ``group`` masked."""
    drop = tuple(env.group_columns(group)) if group is not None else ()
    return _plugin_estimates(env, drop)["val_mse"]


def classify(records: list[ScoreRecord]) -> list[ScoreRecord]:
    """Label each record low/high on smoothness and ERF confounding against sibling medians."""
    if not records:
        return records
    smooth = np.array([r.smoothness for r in records])
    conf = np.array([r.confounding["erf"] for r in records])
    s_med, c_med = np.median(smooth), np.median(conf)
    for r, s, c in zip(records, smooth, conf):
        r.classification = {
            "smoothness": "high" if s > s_med else "low",
            "confounding": "high" if c > c_med else "low",
        }
    return records


def score_groups(env: SpaceEnv, groups=None) -> list[ScoreRecord]:
    groups = list(env.config.covariate_groups) if groups is None else list(groups)
    records = [
        ScoreRecord(g, smoothness_score(env, g), confounding_scores(env, g)) for g in groups
    ]
    return classify(records)
