"""End-to-end runs: collection -> environment -> datasets -> scores -> baselines -> reports."""

from __future__ import annotations

import contextlib
import datetime as dt
import logging
import shutil
import time
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
import pandas as pd

from . import bundles
from .baselines import EstimatorSpec, run_baseline
from .config import PipelineConfig, load_config
from .dataset import ScoreRecord, classify, confounding_scores, make_dataset, smoothness_score
from .env import generate_env
from .errors import NumericalError, ScbenchError, ValidationError
from .evaluator import eval_report
from .seeding import derive_seed

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["dataset", "masked_group", "method", "estimand", "error"]
UNMASKED = "unmasked"
TUNED = ("spatial", "spatialplus", "dapsm")


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Provenance of one run. Timestamps and paths live here and nowhere else."""

    command: str
    config_digest: str
    seeds: dict
    tool_version: str
    started: str
    finished: str | None = None
    outputs: dict = field(default_factory=dict)
    stage_seconds: dict = field(default_factory=dict)
    status: str = "running"

    def write(self, path) -> None:
        bundles.write_json(asdict(self), path)


@contextlib.contextmanager
def stage(name: str, timings: dict | None = None):
    """Tag errors raised inside the block with the pipeline stage name."""
    t0 = time.perf_counter()
    try:
        yield
    except ScbenchError as exc:
        if not getattr(exc, "stage", None):
            exc.stage = name
            exc.args = (f"[{name}] {exc.args[0] if exc.args else exc}", *exc.args[1:])
        raise
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        err = NumericalError(f"[{name}] {exc}")
        err.stage = name
        raise err from exc
    finally:
        if timings is not None:
            timings[name] = round(time.perf_counter() - t0, 3)


def _prepare_out(out: Path) -> None:
    if out.exists() and any(out.iterdir()):
        raise ValidationError(f"output directory {out} exists and is not empty")
    out.mkdir(parents=True, exist_ok=True)


def quarantine(out: Path) -> Path:
    """Move partial outputs aside so they are never mistaken for a finished run."""
    dest = out.with_name(out.name + ".failed")
    if dest.exists():
        shutil.rmtree(dest)
    out.rename(dest)
    return dest


def report_rows(dataset_name: str, group: str | None, method: str, report) -> list[dict]:
    rows = []
    for estimand, metric in (("ate", "bias"), ("erf", "rmise"), ("ite", "pehe")):
        value = getattr(report, metric)
        if value is not None:
            rows.append({
                "dataset": dataset_name,
                "masked_group": group or "",
                "method": method,
                "estimand": estimand,
                "error": value,
            })
    return rows


def applicable(method: str, treatment_type: str) -> bool:
    return method != "dapsm" or treatment_type == "binary"


def run_pipeline(config_path, out_dir, *, overrides: dict | None = None, command: str = "run") -> dict:
    """Execute the full pipeline and return the output paths.

    On failure the output directory is renamed to ``<out>.failed`` and the
    stage-tagged error is re-raised.
    """
    out = Path(out_dir)
    _prepare_out(out)
    timings: dict = {}
    try:
        with stage("config", timings):
            cfg = load_config(config_path, overrides)
        manifest = RunManifest(
            command=command,
            config_digest=cfg.digest,
            seeds={
                "config": cfg.seed,
                "split": derive_seed(cfg.seed, "split"),
                "ensemble": derive_seed(cfg.seed, "ensemble"),
                "gmrf": derive_seed(cfg.seed, "gmrf"),
            },
            tool_version=tool_version(),
            started=_now(),
            stage_seconds=timings,
        )
        paths = _run(cfg, out, timings)
    except BaseException:
        if out.exists():
            dest = quarantine(out)
            log.error("run failed; partial outputs moved to %s", dest)
        raise
    manifest.outputs = {k: str(v) for k, v in paths.items()}
    manifest.finished = _now()
    manifest.status = "ok"
    manifest.write(out / "manifest.json")
    paths["manifest"] = out / "manifest.json"
    return paths


def _run(cfg: PipelineConfig, out: Path, timings: dict) -> dict:
    with stage("ingest", timings):
        collection = cfg.load_collection()
        env_config = cfg.env_config(collection)
        env_config.validate(collection)
    with stage("train-env", timings):
        env = generate_env(collection, env_config)
        bundles.write_env(env, out / "env")

    groups = cfg.mask if cfg.mask is not None else list(env_config.covariate_groups)
    datasets = {}
    records = []
    with stage("make-dataset", timings):
        for g in groups:
            env.group_columns(g)
            datasets[g] = make_dataset(env, g, scores=False)
        if cfg.raw.get("include_unmasked", False):
            datasets[UNMASKED] = make_dataset(env, None)
    with stage("score", timings):
        if cfg.with_scores:
            for g in groups:
                ds = datasets[g]
                ds.smoothness_score = smoothness_score(env, g)
                ds.confounding_scores = confounding_scores(env, g)
                records.append(ScoreRecord(g, ds.smoothness_score, ds.confounding_scores))
            classify(records)
        for name, ds in datasets.items():
            bundles.write_dataset(ds, out / "datasets" / name)
        bundles.write_json([asdict(r) for r in records], out / "scores.json")

    rows = []
    with stage("baseline", timings):
        for name, ds in datasets.items():
            group = None if name == UNMASKED else name
            for method in cfg.baselines:
                if not applicable(method, ds.treatment_type):
                    log.info("skipping %s on %s (binary treatments only)", method, name)
                    continue
                budget = cfg.tuning_budget if method in TUNED else None
                spec = EstimatorSpec(method, budget=budget, seed=derive_seed(cfg.seed, "baseline", method))
                est, _ = run_baseline(spec, ds)
                rep = eval_report(est, ds)
                d = out / "results" / name / method
                bundles.write_estimates(est, d, ds.graph.node_ids)
                bundles.write_report(rep, d / "report.json")
                rows += report_rows(name, group, method, rep)
    with stage("report", timings):
        bundles.write_table(pd.DataFrame(rows, columns=REPORT_COLUMNS), out / "report.csv")

    return {
        "env": out / "env",
        **{f"dataset:{k}": out / "datasets" / k for k in datasets},
        "scores": out / "scores.json",
        "report": out / "report.csv",
    }


def aggregate_reports(paths) -> pd.DataFrame:
    """Mean and 1.96 x standard-error half-width per (masked group, method, estimand)."""
    frames = [bundles.read_table(p) for p in paths]
    if not frames:
        raise ValidationError("no reports to aggregate")
    df = pd.concat(frames, ignore_index=True)
    df["masked_group"] = df["masked_group"].fillna("")
    g = df.groupby(["masked_group", "method", "estimand"], sort=True)["error"]
    agg = g.agg(["count", "mean", "std"]).reset_index()
    agg["std"] = agg["std"].fillna(0.0)
    agg["ci95"] = 1.96 * agg["std"] / np.sqrt(agg["count"])
    return agg.rename(columns={"count": "n_runs"})
