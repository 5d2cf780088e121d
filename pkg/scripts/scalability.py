"""Time one variance-matched GMRF draw on a large grid graph.

Reports wall time per phase and peak resident memory.
"""

import argparse
import resource
import time

from scbench.gmrf import sample_residual_field
from scbench.graph import grid_graph
from scbench.seeding import stream


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--side", type=int, default=1000)
    p.add_argument("--rho", type=float, default=0.9)
    p.add_argument("--backend", choices=["auto", "cholmod", "superlu"], default="auto")
    args = p.parse_args(argv)

    t0 = time.perf_counter()
    g = grid_graph(args.side)
    t1 = time.perf_counter()
    target = stream(0, "scalability").standard_normal(g.n_nodes)
    r = sample_residual_field(g, args.rho, target, seed=0, backend=args.backend)
    t2 = time.perf_counter()
    rss_gb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1e6
    print(f"nodes {g.n_nodes}, edges {g.n_edges}")
    print(f"graph build {t1 - t0:.1f}s, draw + variance matching {t2 - t1:.1f}s")
    print(f"peak RSS {rss_gb:.2f} GB, std relative error {abs(r.std() / target.std() - 1):.1e}")


if __name__ == "__main__":
    main()
