"""On-disk environment, dataset and estimate bundles.

Tables are comma-separated with a header row and ``%.17g`` floats, so a
write/read/write cycle is byte-stable. Metadata documents are sorted-key
JSON.
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .dataset import SpaceDataset, anonymization_map
from .ensemble import FeatureMatrix
from .env import EnvConfig, SpaceEnv, TreatmentGrid
from .errors import ValidationError
from .evaluator import CausalEstimates, EvalReport
from .gmrf import GmrfParams
from .graph import read_graph, write_graph
from .splitter import TrainValSplit

FORMAT_VERSION = 1
FLOAT_FORMAT = "%.17g"

BANNER = (
    "WARNING: outcomes and counterfactuals in this dataset are synthetic. They are "
    "generated for benchmarking estimators and must not be used to draw conclusions "
    "about the source data."
)
_banner_shown = False


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"missing file {path}") from None
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON: {exc}") from exc


def write_table(df: pd.DataFrame, path) -> None:
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def read_table(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype={"node_id": str}, float_precision="round_trip")
    except FileNotFoundError:
        raise ValidationError(f"missing file {path}") from None


def _node_frame(node_ids, **columns) -> pd.DataFrame:
    df = pd.DataFrame({"node_id": list(node_ids)})
    for k, v in columns.items():
        df[k] = v
    return df


def _matrix_frame(node_ids, matrix, prefix) -> pd.DataFrame:
    cols = {f"{prefix}{j}": matrix[:, j] for j in range(matrix.shape[1])}
    return pd.concat([pd.DataFrame({"node_id": list(node_ids)}), pd.DataFrame(cols)], axis=1)


def _aligned(df: pd.DataFrame, node_ids, path) -> pd.DataFrame:
    if list(df["node_id"]) != list(node_ids):
        raise ValidationError(f"{path}: rows are not aligned to the graph nodes")
    return df


# -- environments -------------------------------------------------------------


def write_env(env: SpaceEnv, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = env.graph.node_ids
    feats = env.features
    write_json(env.config.to_dict(), out / "config.json")
    f = _node_frame(ids, **{c: feats.covariates[:, k] for k, c in enumerate(feats.covariate_names)})
    f[feats.treatment_name] = feats.treatment
    write_table(f, out / "features.csv")
    write_table(
        _node_frame(
            ids,
            observed_outcome=env.observed_outcome,
            synthetic_outcome=env.synthetic_outcome,
            residual_empirical=env.residuals_empirical,
            residual_synthetic=env.residuals_synthetic,
        ),
        out / "outcome.csv",
    )
    write_table(_matrix_frame(ids, env.counterfactuals, "cf_"), out / "counterfactuals.csv")
    write_table(pd.DataFrame({"value": env.grid.values}), out / "grid.csv")
    write_graph(env.graph, out / "edges.csv", out / "coords.csv")
    write_table(_node_frame(ids, role=env.split.roles(env.n_nodes)), out / "split.csv")
    write_json(env.diagnostics, out / "diagnostics.json")
    write_json(env.model_summary, out / "model_summary.json")
    write_json(
        {"rho_hat": env.rho_hat, "rho": env.gmrf.rho, "lam": env.gmrf.lam, "seed": env.gmrf_seed},
        out / "gmrf.json",
    )
    groups = [None, *env.config.covariate_groups]
    write_json(
        {("__none__" if g is None else g): anonymization_map(env, g) for g in groups},
        out / "name_maps.json",
    )
    write_json(
        {
            "format_version": FORMAT_VERSION,
            "kind": "environment",
            "treatment_type": env.treatment_type,
            "treatment_levels": list(env.grid.levels) if env.grid.levels else None,
            "n_nodes": env.n_nodes,
        },
        out / "env.json",
    )
    return out


def read_env(env_dir) -> SpaceEnv:
    d = Path(env_dir)
    meta = read_json(d / "env.json")
    if meta.get("kind") != "environment":
        raise ValidationError(f"{d} is not an environment bundle")
    config = EnvConfig.from_dict(read_json(d / "config.json"))
    coords = d / "coords.csv"
    feats_df = read_table(d / "features.csv")
    ids = list(feats_df["node_id"])
    graph = read_graph(d / "edges.csv", coords if coords.exists() else None, node_ids=ids)
    cov_names = config.covariate_columns
    features = FeatureMatrix(
        feats_df[cov_names].to_numpy(float) if cov_names else np.empty((len(ids), 0)),
        feats_df[config.treatment].to_numpy(float),
        tuple(cov_names),
        config.treatment,
    )
    out = _aligned(read_table(d / "outcome.csv"), ids, d / "outcome.csv")
    cf = _aligned(read_table(d / "counterfactuals.csv"), ids, d / "counterfactuals.csv")
    grid_vals = read_table(d / "grid.csv")["value"].to_numpy(float)
    levels = meta.get("treatment_levels")
    split_df = _aligned(read_table(d / "split.csv"), ids, d / "split.csv")
    roles = split_df["role"].to_numpy()
    split = TrainValSplit(
        np.flatnonzero(roles == "train"), np.flatnonzero(roles == "val"), np.flatnonzero(roles == "buffer")
    )
    g = read_json(d / "gmrf.json")
    return SpaceEnv(
        config=config,
        graph=graph,
        features=features,
        grid=TreatmentGrid(grid_vals, tuple(levels) if levels else None),
        observed_outcome=out["observed_outcome"].to_numpy(float),
        synthetic_outcome=out["synthetic_outcome"].to_numpy(float),
        counterfactuals=cf.drop(columns="node_id").to_numpy(float),
        residuals_empirical=out["residual_empirical"].to_numpy(float),
        residuals_synthetic=out["residual_synthetic"].to_numpy(float),
        gmrf=GmrfParams(g["rho"], g["lam"]),
        gmrf_seed=int(g["seed"]),
        rho_hat=float(g["rho_hat"]),
        split=split,
        model_summary=read_json(d / "model_summary.json"),
        diagnostics=read_json(d / "diagnostics.json"),
    )


def read_name_map(env_dir, group: str | None) -> dict[str, str]:
    maps = read_json(Path(env_dir) / "name_maps.json")
    return maps["__none__" if group is None else group]


# -- datasets -----------------------------------------------------------------


def write_dataset(ds: SpaceDataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = ds.graph.node_ids
    write_table(
        _node_frame(ids, **{c: ds.covariates[:, k] for k, c in enumerate(ds.covariate_names)}),
        out / "covariates.csv",
    )
    write_table(_node_frame(ids, treatment=ds.treatment), out / "treatment.csv")
    write_table(_node_frame(ids, outcome=ds.outcome), out / "outcome.csv")
    write_table(_matrix_frame(ids, ds.counterfactuals, "cf_"), out / "counterfactuals.csv")
    write_table(pd.DataFrame({"value": ds.grid.values}), out / "grid.csv")
    write_graph(ds.graph, out / "edges.csv", out / "coords.csv")
    write_json(
        {"smoothness": ds.smoothness_score, "confounding": ds.confounding_scores},
        out / "scores.json",
    )
    write_json(
        {
            "format_version": FORMAT_VERSION,
            "kind": "dataset",
            "treatment_type": ds.treatment_type,
            "treatment_levels": list(ds.grid.levels) if ds.grid.levels else None,
            "masked_group_id": ds.masked_group_id,
            "n_nodes": ds.n_nodes,
            "notice": BANNER,
        },
        out / "dataset.json",
    )
    return out


def show_banner(stream=None) -> None:
    global _banner_shown
    if not _banner_shown:
        print(BANNER, file=stream or sys.stderr)
        _banner_shown = True


def read_dataset(ds_dir) -> SpaceDataset:
    """Load a dataset bundle. The first load in a process prints a synthetic-data warning."""
    d = Path(ds_dir)
    meta = read_json(d / "dataset.json")
    if meta.get("kind") != "dataset":
        raise ValidationError(f"{d} is not a dataset bundle")
    cov = read_table(d / "covariates.csv")
    ids = list(cov["node_id"])
    coords = d / "coords.csv"
    graph = read_graph(d / "edges.csv", coords if coords.exists() else None, node_ids=ids)
    names = tuple(c for c in cov.columns if c != "node_id")
    scores = read_json(d / "scores.json")
    levels = meta.get("treatment_levels")
    ds = SpaceDataset(
        covariates=cov[list(names)].to_numpy(float),
        covariate_names=names,
        treatment=_aligned(read_table(d / "treatment.csv"), ids, d)["treatment"].to_numpy(float),
        outcome=_aligned(read_table(d / "outcome.csv"), ids, d)["outcome"].to_numpy(float),
        counterfactuals=_aligned(read_table(d / "counterfactuals.csv"), ids, d).drop(columns="node_id").to_numpy(float),
        grid=TreatmentGrid(read_table(d / "grid.csv")["value"].to_numpy(float), tuple(levels) if levels else None),
        graph=graph,
        treatment_type=meta["treatment_type"],
        smoothness_score=scores.get("smoothness"),
        confounding_scores=scores.get("confounding") or {},
        masked_group_id=meta.get("masked_group_id", ""),
    )
    show_banner()
    return ds


# -- estimates and reports ----------------------------------------------------


def write_estimates(est: CausalEstimates, out_dir, node_ids=None) -> Path:
    """``estimates.json`` plus ``ite.csv`` (referenced from the JSON) when present."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"ate": est.ate, "erf": est.erf, "ite": None, "extras": est.extras}
    if est.ite is not None:
        ids = node_ids if node_ids is not None else [str(k) for k in range(len(est.ite))]
        write_table(_matrix_frame(ids, est.ite, "cf_"), out / "ite.csv")
        doc["ite"] = "ite.csv"
    write_json(doc, out / "estimates.json")
    return out / "estimates.json"


def read_estimates(path) -> CausalEstimates:
    """Read ``estimates.json``; ``path`` may be the file or its directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "estimates.json"
    doc = read_json(path)
    ite = None
    if doc.get("ite"):
        ite = read_table(path.parent / doc["ite"]).drop(columns="node_id").to_numpy(float)
    erf = doc.get("erf")
    return CausalEstimates(
        ate=doc.get("ate"),
        erf=None if erf is None else np.array([np.nan if v is None else v for v in erf], float),
        ite=ite,
        extras=doc.get("extras") or {},
    )


def write_report(report: EvalReport, path) -> None:
    write_json(report.to_dict(), path)
