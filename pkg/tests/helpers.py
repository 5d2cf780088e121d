"""Shared graph, environment and dataset builders for the test-suite."""

import numpy as np
import scipy.sparse as sp
from scipy.sparse import linalg as spla

from scbench.baselines import weights_matrix
from scbench.collection import demo_collection
from scbench.dataset import SpaceDataset
from scbench.env import EnvConfig, TreatmentGrid, generate_env
from scbench.graph import build_graph, grid_graph
from scbench.seeding import stream


def path_graph(n):
    ids = [str(i) for i in range(n)]
    return build_graph(ids, [(ids[i], ids[i + 1]) for i in range(n - 1)])


def cycle_graph(n):
    ids = [str(i) for i in range(n)]
    return build_graph(ids, [(ids[i], ids[(i + 1) % n]) for i in range(n)])


def star_graph(n):
    ids = [str(i) for i in range(n)]
    return build_graph(ids, [(ids[0], ids[i]) for i in range(1, n)])


def demo_env(n_grid=20, seed=0, **kw):
    """Small demo environment; keyword arguments go to ``demo_collection``."""
    coll = demo_collection(n_grid=n_grid, seed=seed, **kw)
    cfg = EnvConfig(
        collection="demo",
        treatment="treatment",
        outcome="outcome",
        covariate_groups=coll.group_map,
        treatment_type=kw.get("treatment_type", "continuous"),
        seed=seed,
    )
    return generate_env(coll, cfg)


def make_ds(graph, x, a, y, cf=None, treatment_type="continuous", grid=None):
    x = np.asarray(x, float).reshape(len(a), -1)
    if grid is None:
        grid = np.array([0.0, 1.0]) if treatment_type == "binary" else np.linspace(a.min(), a.max(), 5)
    if cf is None:
        cf = np.repeat(y[:, None], len(grid), axis=1)
    return SpaceDataset(x, tuple(f"X{k + 1}" for k in range(x.shape[1])), np.asarray(a, float), y, cf,
                        TreatmentGrid(grid), graph, treatment_type)


def lag_dataset(seed, rho=0.5, tau=2.0, n_grid=30):
    g = grid_graph(n_grid)
    rng = stream(seed, "lag-model")
    n = g.n_nodes
    x = rng.standard_normal((n, 2))
    a = 0.5 * x[:, 0] + rng.standard_normal(n)
    w = weights_matrix(g)
    lhs = spla.splu(sp.csc_matrix(sp.identity(n) - rho * w))
    y = lhs.solve(1.0 + tau * a + x @ [1.0, -0.5] + rng.standard_normal(n))
    return make_ds(g, x, a, y)


def error_dataset(seed, lam=0.6, tau=2.0, n_grid=30):
    g = grid_graph(n_grid)
    rng = stream(seed, "error-model")
    n = g.n_nodes
    x = rng.standard_normal((n, 2))
    a = 0.5 * x[:, 0] + rng.standard_normal(n)
    u = spla.splu(sp.csc_matrix(sp.identity(n) - lam * weights_matrix(g))).solve(rng.standard_normal(n))
    return make_ds(g, x, a, 1.0 + tau * a + x @ [1.0, -0.5] + u)
