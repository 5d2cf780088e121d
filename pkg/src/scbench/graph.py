"""Undirected spatial graphs, neighbor averages and Moran's I."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError

_EDGE_HEADERS = {"source", "src", "from", "node", "node_id", "node1", "u", "i"}


@dataclass(frozen=True, eq=False)
class SpatialGraph:
    """Immutable undirected graph with optional planar coordinates.

    ``edges`` stores each unordered pair once as ``(i, j)`` with ``i < j``,
    sorted lexicographically. All per-node arrays elsewhere in the package
    are aligned to ``node_ids``.
    """

    node_ids: tuple[str, ...]
    edges: np.ndarray
    coords: np.ndarray | None = None
    degree: np.ndarray = field(init=False)

    def __post_init__(self):
        n = len(self.node_ids)
        deg = np.bincount(self.edges.ravel(), minlength=n).astype(np.int64)
        object.__setattr__(self, "degree", deg)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def index(self) -> dict[str, int]:
        return {node: i for i, node in enumerate(self.node_ids)}

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric binary adjacency in CSR form."""
        n = self.n_nodes
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(i))
        adj = sp.csr_matrix(
            (data, (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(n, n)
        )
        adj.sort_indices()
        return adj

    @cached_property
    def isolated(self) -> np.ndarray:
        return self.degree == 0

    def neighbors(self, i: int) -> np.ndarray:
        adj = self.adjacency
        return adj.indices[adj.indptr[i] : adj.indptr[i + 1]]

    def edge_list(self) -> list[tuple[str, str]]:
        ids = self.node_ids
        return [(ids[i], ids[j]) for i, j in self.edges]

    def __repr__(self) -> str:
        return f"SpatialGraph(n_nodes={self.n_nodes}, n_edges={self.n_edges})"


def build_graph(
    node_ids: Sequence[Hashable],
    edge_list: Iterable[tuple[Hashable, Hashable]],
    coords=None,
) -> SpatialGraph:
    """Build a graph, dropping self-loops and duplicate/reversed edges.

    Node ids are stored as strings in input order.

    Raises
    ------
    ValidationError
        On duplicate node ids or edges that mention undeclared nodes.
    """
    ids = tuple(str(v) for v in node_ids)
    index = {v: k for k, v in enumerate(ids)}
    if len(index) != len(ids):
        seen = set()
        dup = next(v for v in ids if v in seen or seen.add(v))
        raise ValidationError(f"duplicate node id {dup!r}")
    pairs = []
    for u, v in edge_list:
        try:
            a, b = index[str(u)], index[str(v)]
        except KeyError as exc:
            raise ValidationError(f"edge references unknown node id {exc.args[0]!r}") from None
        if a != b:
            pairs.append((a, b) if a < b else (b, a))
    if pairs:
        edges = np.unique(np.asarray(pairs, dtype=np.int64), axis=0)
    else:
        edges = np.empty((0, 2), dtype=np.int64)
    if coords is not None:
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (len(ids), 2):
            raise ValidationError(f"coords must have shape ({len(ids)}, 2), got {coords.shape}")
        coords.setflags(write=False)
    edges.setflags(write=False)
    return SpatialGraph(ids, edges, coords)


def grid_graph(nrows: int, ncols: int | None = None, connectivity: str = "rook") -> SpatialGraph:
    """Lattice graph with unit-spaced coordinates.

    ``connectivity`` is ``"rook"`` (4 neighbors) or ``"queen"`` (8 neighbors).
    Node ``r*ncols + c`` has id ``"r_c"`` and coordinates ``(c, r)``.
    """
    ncols = nrows if ncols is None else ncols
    if connectivity not in ("rook", "queen"):
        raise ValidationError(f"unknown connectivity {connectivity!r}")
    idx = np.arange(nrows * ncols).reshape(nrows, ncols)
    blocks = [
        (idx[:, :-1], idx[:, 1:]),
        (idx[:-1, :], idx[1:, :]),
    ]
    if connectivity == "queen":
        blocks += [(idx[:-1, :-1], idx[1:, 1:]), (idx[:-1, 1:], idx[1:, :-1])]
    edges = np.concatenate(
        [np.column_stack([a.ravel(), b.ravel()]) for a, b in blocks]
    )
    edges = np.sort(edges, axis=1)
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    edges.setflags(write=False)
    rr, cc = np.divmod(np.arange(nrows * ncols), ncols)
    coords = np.column_stack([cc, rr]).astype(float)
    coords.setflags(write=False)
    ids = tuple(f"{r}_{c}" for r, c in zip(rr, cc))
    return SpatialGraph(ids, edges, coords)


def as_field(graph: SpatialGraph, values, name: str = "field") -> np.ndarray:
    """Validate a per-node vector against ``graph``."""
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or len(x) != graph.n_nodes:
        raise ValidationError(
            f"{name} has shape {x.shape}, expected ({graph.n_nodes},)"
        )
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains non-finite values")
    return x


def neighbor_means(graph: SpatialGraph, values) -> np.ndarray:
    """Mean of ``values`` over each node's neighbors; NaN marks isolated nodes."""
    x = as_field(graph, values)
    sums = graph.adjacency @ x
    out = np.full(graph.n_nodes, np.nan)
    ok = ~graph.isolated
    out[ok] = sums[ok] / graph.degree[ok]
    return out


def morans_i(graph: SpatialGraph, values) -> float:
    """Global Moran's I with binary adjacency weights.

    ``S0`` counts every edge in both directions. The value is not clamped
    and can leave ``[-1, 1]`` slightly on irregular graphs.
    """
    x = as_field(graph, values)
    if graph.n_edges == 0:
        raise ValidationError("Moran's I is undefined on an edgeless graph")
    z = x - x.mean()
    denom = z @ z
    if denom <= 1e-300 * len(z) or np.ptp(x) == 0:
        raise ValidationError("Moran's I is undefined for a zero-variance field")
    s0 = 2.0 * graph.n_edges
    return float(len(x) / s0 * (z @ (graph.adjacency @ z)) / denom)


# -- files ------------------------------------------------------------------


def _sniff_rows(path: Path) -> list[list[str]]:
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return []
    try:
        dialect = csv.Sniffer().sniff(lines[0], delimiters=",\t; ")
        delim = dialect.delimiter
    except csv.Error:
        delim = ","
    if delim == " ":
        return [ln.split() for ln in lines]
    return [[c.strip() for c in row] for row in csv.reader(lines, delimiter=delim)]


def read_edge_list(path, node_ids: Sequence[str] | None = None) -> list[tuple[str, str]]:
    """Read a two-column delimited edge file; a header row is optional.

    With ``node_ids`` given, the first row counts as a header when either
    token is not a declared node. Otherwise it is a header when its first
    token is a conventional column name such as ``source``.
    """
    rows = _sniff_rows(path)
    if not rows:
        return []
    first = rows[0]
    if node_ids is not None:
        known = set(map(str, node_ids))
        header = len(first) >= 2 and not (first[0] in known and first[1] in known)
    else:
        header = first[0].lower() in _EDGE_HEADERS
    body = rows[1:] if header else rows
    out = []
    for k, row in enumerate(body):
        if len(row) < 2:
            raise ValidationError(f"{path}: malformed edge row {k + 1}: {row!r}")
        out.append((row[0], row[1]))
    return out


def read_coords(path) -> dict[str, tuple[float, float]]:
    """Read ``node_id, x, y`` rows; a header row is detected by a non-numeric x."""
    rows = _sniff_rows(path)
    out = {}
    for k, row in enumerate(rows):
        if len(row) < 3:
            raise ValidationError(f"{path}: malformed coordinate row {k + 1}: {row!r}")
        try:
            out[row[0]] = (float(row[1]), float(row[2]))
        except ValueError:
            if k == 0:
                continue
            raise ValidationError(f"{path}: non-numeric coordinate in row {k + 1}") from None
    return out


def write_graph(graph: SpatialGraph, edge_path, coords_path=None) -> None:
    with open(edge_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "target"])
        w.writerows(graph.edge_list())
    if coords_path is not None and graph.coords is not None:
        with open(coords_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_id", "x", "y"])
            for node, (x, y) in zip(graph.node_ids, graph.coords):
                w.writerow([node, repr(float(x)), repr(float(y))])


def read_graph(edge_path, coords_path=None, node_ids: Sequence[str] | None = None) -> SpatialGraph:
    """Load a graph from an edge file and an optional coordinate file.

    Without ``node_ids`` the node order is that of first appearance in the
    coordinate file, then the edge file.
    """
    edges = read_edge_list(edge_path, node_ids)
    coords = read_coords(coords_path) if coords_path is not None else None
    if node_ids is None:
        order = dict.fromkeys(coords or ())
        for u, v in edges:
            order.setdefault(u)
            order.setdefault(v)
        node_ids = list(order)
    xy = None
    if coords is not None:
        missing = [v for v in node_ids if str(v) not in coords]
        if missing:
            raise ValidationError(f"coordinates missing for node {missing[0]!r}")
        xy = np.array([coords[str(v)] for v in node_ids])
    return build_graph(node_ids, edges, xy)
