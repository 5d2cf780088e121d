"""Pipeline configuration: YAML document, schema validation and digest."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from .collection import DataCollection, demo_collection, ingest
from .env import EnvConfig
from .errors import ValidationError
from .splitter import SplitParams


def schema() -> dict:
    return json.loads(resources.files("scbench").joinpath("config_schema.json").read_text())


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(raw: dict) -> str:
    """sha256 of the canonical JSON form; any field change changes it."""
    return hashlib.sha256(canonical_json(raw).encode()).hexdigest()


@dataclass(frozen=True)
class PipelineConfig:
    raw: dict
    base_dir: Path = field(default=Path("."), compare=False)

    @property
    def digest(self) -> str:
        return config_digest(self.raw)

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def is_demo(self) -> bool:
        return isinstance(self.raw["data_collection"], dict)

    @property
    def mask(self) -> list[str] | None:
        return self.raw.get("mask")

    @property
    def baselines(self) -> list[str]:
        return list(self.raw.get("baselines", []))

    @property
    def with_scores(self) -> bool:
        return bool(self.raw.get("scores", True))

    @property
    def tuning_budget(self) -> int | None:
        return self.raw.get("tuning_budget")

    def load_collection(self) -> DataCollection:
        src = self.raw["data_collection"]
        if isinstance(src, dict):
            return demo_collection(**src["demo"])
        path = Path(src)
        if not path.is_absolute():
            path = self.base_dir / path
        return ingest(path)

    def env_config(self, collection: DataCollection) -> EnvConfig:
        r = self.raw
        defaults = collection.notes.get("defaults", {})
        treatment = r.get("treatment", defaults.get("treatment"))
        outcome = r.get("outcome", defaults.get("outcome"))
        if treatment is None or outcome is None:
            raise ValidationError("config must name the treatment and outcome columns")
        groups = r.get("covariate_groups", collection.group_map)
        name = self.raw["data_collection"]
        treatment_type = r.get("treatment_type")
        if treatment_type is None and isinstance(name, dict):
            treatment_type = name["demo"].get("treatment_type", "continuous")
        return EnvConfig(
            collection=name if isinstance(name, str) else "demo:" + canonical_json(name["demo"]),
            treatment=treatment,
            outcome=outcome,
            covariate_groups=groups,
            treatment_type=treatment_type or "continuous",
            outcome_transform=r.get("outcome_transform", "none"),
            grid_size=r.get("grid_size"),
            seed=self.seed,
            split=SplitParams(**r.get("split", {})),
            ensemble_grids=r.get("ensemble"),
        )


def validate_raw(raw) -> dict:
    if not isinstance(raw, dict):
        raise ValidationError("config must be a mapping")
    try:
        jsonschema.validate(raw, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"config invalid at {where}: {exc.message}") from None
    return raw


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file {path} not found") from None
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: malformed YAML: {exc}") from exc
    raw = dict(raw or {})
    raw.update(overrides or {})
    return PipelineConfig(validate_raw(raw), path.parent)
