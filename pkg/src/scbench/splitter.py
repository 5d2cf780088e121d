"""Spatially-aware train/validation split with a BFS buffer."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .graph import SpatialGraph
from .seeding import stream


@dataclass(frozen=True)
class SplitParams:
    """Seed fraction ``alpha``, validation BFS ``levels`` and ``buffer`` depth."""

    alpha: float = 0.02
    levels: int = 1
    buffer: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.levels < 0 or self.buffer < 0:
            raise ValidationError("levels and buffer must be nonnegative")


@dataclass(frozen=True, eq=False)
class TrainValSplit:
    train: np.ndarray
    val: np.ndarray
    buffer: np.ndarray

    def roles(self, n: int) -> np.ndarray:
        """Per-node role labels ``train``/``val``/``buffer``."""
        out = np.empty(n, dtype=object)
        out[self.train] = "train"
        out[self.val] = "val"
        out[self.buffer] = "buffer"
        return out

    def __eq__(self, other):
        if not isinstance(other, TrainValSplit):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("train", "val", "buffer")
        )


def _expand(graph: SpatialGraph, mask: np.ndarray, steps: int) -> np.ndarray:
    adj = graph.adjacency
    for _ in range(steps):
        grown = mask | (adj @ mask.astype(np.float64) > 0)
        if np.array_equal(grown, mask):
            break
        mask = grown
    return mask


def split_from_seeds(graph: SpatialGraph, seeds, levels: int = 1, buffer: int = 1) -> TrainValSplit:
    """Grow validation nodes ``levels`` hops from ``seeds`` and a buffer ``buffer`` more."""
    n = graph.n_nodes
    val = np.zeros(n, dtype=bool)
    val[np.asarray(seeds, dtype=np.int64)] = True
    val = _expand(graph, val, levels)
    blocked = _expand(graph, val, buffer)
    train = ~blocked
    if not train.any():
        raise ValidationError("spatial split left no training nodes; lower alpha, levels or buffer")
    return TrainValSplit(
        train=np.flatnonzero(train),
        val=np.flatnonzero(val),
        buffer=np.flatnonzero(blocked & ~val),
    )


def n_seeds(n: int, alpha: float) -> int:
    k = math.ceil(alpha * n - 1e-9)
    if k < 1:
        raise ValidationError(f"alpha={alpha} selects no seed nodes out of {n}")
    return k


def spatial_split(graph: SpatialGraph, params: SplitParams = SplitParams()) -> TrainValSplit:
    """Sample ``ceil(alpha*n)`` seed nodes, then grow validation set and buffer by BFS.

    The seeds come from the named stream ``(params.seed, "split")``.
    """
    n = graph.n_nodes
    if n == 0:
        raise ValidationError("cannot split an empty graph")
    k = n_seeds(n, params.alpha)
    rng = stream(params.seed, "split")
    seeds = np.sort(rng.choice(n, size=k, replace=False))
    return split_from_seeds(graph, seeds, params.levels, params.buffer)


def write_membership(graph: SpatialGraph, split: TrainValSplit, path) -> None:
    roles = split.roles(graph.n_nodes)
    with open(path, "w") as fh:
        fh.write("node_id,node_index,role\n")
        for k, (node, role) in enumerate(zip(graph.node_ids, roles)):
            fh.write(f"{node},{k},{role}\n")
