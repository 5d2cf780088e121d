"""Run the full pipeline over several root seeds and aggregate the reports.

Usage::

    python scripts/run_demo_benchmark.py scripts/demo.yaml runs/ --seeds 5
"""

import argparse
import logging
from pathlib import Path

from scbench.pipeline import aggregate_reports, run_pipeline


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--seeds", type=int, default=5)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    reports = []
    for seed in range(args.seeds):
        paths = run_pipeline(args.config, args.out / f"seed{seed}", overrides={"seed": seed})
        reports.append(paths["report"])
    table = aggregate_reports(reports)
    table.to_csv(args.out / "summary.csv", index=False)
    print(table.to_string(index=False))


if __name__ == "__main__":
    main()
