"""Data collections: node tables plus graph plus covariate groups.

A collection directory holds

- ``nodes.csv``: ``node_id`` plus one column per variable,
- ``edges.csv``: two-column edge list (header optional),
- ``coords.csv``: optional ``node_id, x, y``,
- ``groups.yaml`` or ``groups.json``: the covariate group map,
- ``notes.json``: optional provenance / ground-truth record.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from .errors import ValidationError
from .gmrf import GmrfSampler
from .graph import SpatialGraph, build_graph, grid_graph, read_coords, read_edge_list, write_graph
from .seeding import stream

log = logging.getLogger(__name__)

MISSING_SUFFIX = "__missing"


@dataclass(eq=False)
class DataCollection:
    table: pd.DataFrame
    graph: SpatialGraph
    group_map: dict[str, list[str]]
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if list(self.table.index) != list(self.graph.node_ids):
            raise ValidationError("table rows are not aligned to graph nodes")
        for group, cols in self.group_map.items():
            missing = [c for c in cols if c not in self.table.columns]
            if missing:
                raise ValidationError(f"group {group!r} names unknown column {missing[0]!r}")

    def column(self, name: str) -> np.ndarray:
        if name not in self.table.columns:
            raise ValidationError(f"collection has no column {name!r}")
        return self.table[name].to_numpy(dtype=float)


def normalize_groups(spec) -> dict[str, list[str]]:
    """Accept ``{name: [cols]}`` or a list mixing bare column names and ``{name: [cols]}``."""
    if isinstance(spec, dict):
        items = list(spec.items())
    elif isinstance(spec, list):
        items = []
        for entry in spec:
            if isinstance(entry, str):
                items.append((entry, [entry]))
            elif isinstance(entry, dict) and len(entry) == 1:
                items.extend(entry.items())
            else:
                raise ValidationError(f"malformed covariate group entry {entry!r}")
    else:
        raise ValidationError("covariate groups must be a mapping or a list")
    out: dict[str, list[str]] = {}
    for name, cols in items:
        cols = [cols] if isinstance(cols, str) else list(cols)
        if not cols:
            raise ValidationError(f"group {name!r} is empty")
        if name in out:
            raise ValidationError(f"duplicate group {name!r}")
        out[str(name)] = [str(c) for c in cols]
    seen: set[str] = set()
    for name, cols in out.items():
        overlap = seen.intersection(cols)
        if overlap:
            raise ValidationError(f"column {sorted(overlap)[0]!r} appears in more than one group")
        seen.update(cols)
    return out


def impute_missing(table: pd.DataFrame, group_map: dict[str, list[str]]):
    """Median-impute grouped columns; add a 0/1 indicator column to the same group."""
    table = table.copy()
    groups = {g: list(c) for g, c in group_map.items()}
    added = []
    for g, cols in group_map.items():
        for c in cols:
            miss = table[c].isna().to_numpy()
            if miss.any():
                if miss.all():
                    raise ValidationError(f"column {c!r} has no observed values")
                table[c] = table[c].fillna(table[c].median())
                ind = c + MISSING_SUFFIX
                table[ind] = miss.astype(float)
                groups[g].append(ind)
                added.append(ind)
    return table, groups, added


def _find(directory: Path, *names: str) -> Path | None:
    for name in names:
        if (directory / name).exists():
            return directory / name
    return None


def ingest(collection_dir) -> DataCollection:
    """Load and validate a collection directory."""
    d = Path(collection_dir)
    nodes_path = _find(d, "nodes.csv")
    edges_path = _find(d, "edges.csv", "edges.txt", "edges.tsv")
    groups_path = _find(d, "groups.yaml", "groups.yml", "groups.json")
    for label, p in (("nodes.csv", nodes_path), ("edge list", edges_path), ("group map", groups_path)):
        if p is None:
            raise ValidationError(f"{d}: missing {label}")
    try:
        table = pd.read_csv(nodes_path, dtype={"node_id": str}, float_precision="round_trip")
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise ValidationError(f"{nodes_path}: {exc}") from exc
    if "node_id" not in table.columns:
        raise ValidationError(f"{nodes_path}: no node_id column")
    if table["node_id"].duplicated().any():
        raise ValidationError(f"duplicate node_id {table['node_id'][table['node_id'].duplicated()].iloc[0]!r}")
    table = table.set_index("node_id")
    node_ids = list(table.index)

    edges = read_edge_list(edges_path, node_ids)
    coords_path = _find(d, "coords.csv")
    coords = read_coords(coords_path) if coords_path else {}
    graph_nodes = set(coords)
    for u, v in edges:
        graph_nodes.update((u, v))
    in_table = set(node_ids)
    missing = [v for v in sorted(graph_nodes - in_table)]
    if missing:
        raise ValidationError(f"graph node {missing[0]!r} has no row in the node table")
    orphans = [v for v in node_ids if v not in graph_nodes]
    if orphans:
        raise ValidationError(f"table row {orphans[0]!r} is not a node of the graph")
    xy = None
    if coords:
        lacking = [v for v in node_ids if v not in coords]
        if lacking:
            raise ValidationError(f"coordinates missing for node {lacking[0]!r}")
        xy = np.array([coords[v] for v in node_ids])
    graph = build_graph(node_ids, edges, xy)

    raw = groups_path.read_text()
    doc = json.loads(raw) if groups_path.suffix == ".json" else yaml.safe_load(raw)
    if isinstance(doc, dict) and "covariate_groups" in doc:
        doc = doc["covariate_groups"]
    group_map = normalize_groups(doc)
    for g, cols in group_map.items():
        for c in cols:
            if c not in table.columns:
                raise ValidationError(f"group {g!r} names unknown column {c!r}")

    table, group_map, added = impute_missing(table, group_map)
    notes_path = _find(d, "notes.json")
    notes = json.loads(notes_path.read_text()) if notes_path else {}
    notes["alignment"] = {
        "n_nodes": graph.n_nodes,
        "n_edges": graph.n_edges,
        "isolated_nodes": int(graph.isolated.sum()),
        "has_coords": xy is not None,
        "imputed_columns": added,
    }
    if added:
        log.info("imputed %d columns with missing values: %s", len(added), ", ".join(added))
    log.info("ingested %s: %d nodes, %d edges", d, graph.n_nodes, graph.n_edges)
    return DataCollection(table, graph, group_map, notes)


def write_collection(collection: DataCollection, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = collection.table.copy()
    table.index.name = "node_id"
    table.to_csv(out / "nodes.csv", float_format="%.17g", lineterminator="\n")
    write_graph(collection.graph, out / "edges.csv", out / "coords.csv")
    (out / "groups.json").write_text(json.dumps(collection.group_map, indent=2) + "\n")
    notes = {k: v for k, v in collection.notes.items() if k != "alignment"}
    (out / "notes.json").write_text(json.dumps(notes, indent=2, sort_keys=True) + "\n")
    return out


# -- demo collections ---------------------------------------------------------


def _standardize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean()) / x.std()


def _smooth_surface(coords: np.ndarray, rng: np.random.Generator, n_waves: int = 4) -> np.ndarray:
    u = (coords - coords.min(axis=0)) / np.ptp(coords, axis=0).clip(min=1e-12)
    out = np.zeros(len(u))
    for _ in range(n_waves):
        freq = rng.uniform(0.3, 1.2, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        out += np.sin(2 * np.pi * (u @ freq) + phase)
    return out


def demo_collection(
    n_grid: int = 40,
    n_covariates: int = 5,
    confounding_strength: float = 1.0,
    seed: int = 0,
    *,
    treatment_type: str = "continuous",
    confounder: str = "gmrf",
    connectivity: str = "rook",
    noise_rho: float = 0.6,
    noise_scale: float = 0.5,
    effect: float = 1.0,
) -> DataCollection:
    """Synthetic grid collection with a designated spatial confounder ``x0``.

    Covariates are standardized CAR draws (``x0`` with rho 0.99, or a smooth
    surface of the coordinates when ``confounder="surface"``). The treatment
    loads on ``x0`` and ``x1`` with coefficients scaled by
    ``confounding_strength``; the outcome is ``effect * A`` plus a fixed
    function of the covariates plus CAR noise. Generating parameters are
    stored under ``notes["ground_truth"]``.
    """
    if n_grid < 8:
        raise ValidationError("n_grid must be at least 8")
    if n_covariates < 2:
        raise ValidationError("need at least two covariates")
    if treatment_type not in ("binary", "continuous"):
        raise ValidationError(f"unknown treatment type {treatment_type!r}")
    graph = grid_graph(n_grid, connectivity=connectivity)
    n = graph.n_nodes

    rhos = [0.99] + list(np.round(np.linspace(0.0, 0.95, n_covariates - 1), 4))
    cols = {}
    for j, rho in enumerate(rhos):
        rng = stream(seed, "demo", "covariate", j)
        if j == 0 and confounder == "surface":
            x = _smooth_surface(graph.coords, rng)
        elif j == 0 and confounder != "gmrf":
            raise ValidationError(f"unknown confounder kind {confounder!r}")
        else:
            x = GmrfSampler(graph, rho).draw(rng)
        cols[f"x{j}"] = _standardize(x)
    X = np.column_stack(list(cols.values()))

    treat_coef = np.zeros(n_covariates)
    treat_coef[0] = 1.0 * confounding_strength
    treat_coef[1] = 0.3 * confounding_strength
    rng = stream(seed, "demo", "treatment")
    if treatment_type == "continuous":
        a = X @ treat_coef + rng.standard_normal(n)
    else:
        logits = 1.5 * X @ treat_coef
        a = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-logits))).astype(float)

    out_coef = np.array([1.0, 0.5, -0.5] + [0.25] * (n_covariates - 3))[:n_covariates]
    interaction = 0.25 * X[:, 1] * X[:, min(2, n_covariates - 1)]
    noise = _standardize(GmrfSampler(graph, noise_rho).draw(stream(seed, "demo", "noise")))
    y = effect * a + X @ out_coef + interaction + noise_scale * noise

    table = pd.DataFrame(cols, index=pd.Index(graph.node_ids, name="node_id"))
    table["treatment"] = a
    table["outcome"] = y

    groups = {"confounder": ["x0"], "g1": ["x1"]}
    rest = [f"x{j}" for j in range(2, n_covariates)]
    for k in range(0, len(rest), 2):
        groups[f"g{k // 2 + 2}"] = rest[k : k + 2]

    notes = {
        "description": "synthetic demo collection; not real data",
        "ground_truth": {
            "effect": effect,
            "treatment_type": treatment_type,
            "confounding_strength": confounding_strength,
            "confounder": "x0",
            "confounder_kind": confounder,
            "covariate_rho": [float(r) for r in rhos],
            "treatment_coefficients": treat_coef.tolist(),
            "outcome_coefficients": out_coef.tolist(),
            "interaction": "0.25 * x1 * x2",
            "noise_rho": noise_rho,
            "noise_scale": noise_scale,
            "n_grid": n_grid,
            "connectivity": connectivity,
            "seed": seed,
        },
        "defaults": {"treatment": "treatment", "outcome": "outcome"},
    }
    return DataCollection(table, graph, groups, notes)
