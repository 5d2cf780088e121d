"""Command-line entry point.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

from . import bundles
from .errors import NumericalError, ValidationError

log = logging.getLogger("scbench")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3
GLOBAL_DEFAULTS = {"seed": None, "threads": None, "out": None, "verbose": False}


def _out(args, default: str | None = None) -> Path:
    if args.out is None and default is None:
        raise ValidationError("--out is required for this command")
    return Path(args.out if args.out is not None else default)


def cmd_ingest(args):
    from .collection import ingest, write_collection

    coll = ingest(args.collection_dir)
    if args.out:
        write_collection(coll, args.out)
    print(json.dumps(coll.notes.get("alignment", {}), indent=2, sort_keys=True))


def cmd_demo_collection(args):
    from .collection import demo_collection, write_collection

    coll = demo_collection(
        args.n_grid, args.n_covariates, args.confounding_strength, args.seed or 0,
        treatment_type=args.treatment_type, confounder=args.confounder, connectivity=args.connectivity,
    )
    write_collection(coll, _out(args))


def cmd_train_env(args):
    from .config import load_config
    from .env import generate_env

    overrides = {"seed": args.seed} if args.seed is not None else None
    cfg = load_config(args.config, overrides)
    collection = cfg.load_collection()
    env = generate_env(collection, cfg.env_config(collection))
    bundles.write_env(env, _out(args))
    d = env.diagnostics
    print(f"rho_hat={d['rho_hat']:.4f} moran_empirical={d['moran_empirical']:.4f} "
          f"moran_synthetic={d['moran_synthetic']:.4f}")


def cmd_make_dataset(args):
    from .dataset import make_dataset

    env = bundles.read_env(args.env)
    ds = make_dataset(env, args.group, scores=not args.no_scores)
    bundles.write_dataset(ds, _out(args))


def cmd_score(args):
    from dataclasses import asdict

    from .dataset import score_groups

    env = bundles.read_env(args.env)
    records = [asdict(r) for r in score_groups(env, args.groups or None)]
    if args.out:
        bundles.write_json(records, args.out)
    else:
        print(json.dumps(bundles.jsonable(records), indent=2, sort_keys=True))


def cmd_split(args):
    from .graph import read_graph
    from .splitter import SplitParams, spatial_split, write_membership

    graph = read_graph(args.edges, args.coords)
    params = SplitParams(args.alpha, args.levels, args.buffer, args.seed or 0)
    split = spatial_split(graph, params)
    write_membership(graph, split, _out(args))
    n = graph.n_nodes
    print(f"train={len(split.train) / n:.3f} val={len(split.val) / n:.3f} buffer={len(split.buffer) / n:.3f}")


def cmd_baseline(args):
    from .baselines import EstimatorSpec, run_baseline
    from .evaluator import eval_report

    ds = bundles.read_dataset(args.dataset)
    spec = EstimatorSpec(args.method, budget=args.budget, seed=args.seed or 0)
    est, params = run_baseline(spec, ds)
    out = _out(args)
    bundles.write_estimates(est, out, ds.graph.node_ids)
    rep = eval_report(est, ds)
    bundles.write_report(rep, out / "report.json")
    print(json.dumps(bundles.jsonable({"params": params, **rep.to_dict()}), sort_keys=True))


def cmd_evaluate(args):
    from .evaluator import eval_report

    ds = bundles.read_dataset(args.dataset)
    rep = eval_report(bundles.read_estimates(args.estimates), ds)
    if args.out:
        bundles.write_report(rep, args.out)
    print(json.dumps(bundles.jsonable(rep.to_dict()), sort_keys=True))


def cmd_report(args):
    from .pipeline import aggregate_reports

    paths = [Path(p) / "report.csv" if Path(p).is_dir() else Path(p) for p in args.reports]
    agg = aggregate_reports(paths)
    if args.out:
        bundles.write_table(agg, args.out)
    else:
        print(agg.to_string(index=False))


def cmd_run(args):
    from .pipeline import run_pipeline

    overrides = {"seed": args.seed} if args.seed is not None else None
    paths = run_pipeline(args.config, _out(args), overrides=overrides)
    print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS so a flag given before the subcommand is not reset by the subparser
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="root seed (overrides the config)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="cap BLAS/OpenMP threads")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output path")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="scbench", description=__doc__, parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="validate a collection directory")
    s.add_argument("collection_dir")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("demo-collection", parents=[common], help="write a synthetic grid collection")
    s.add_argument("--n-grid", type=int, default=40)
    s.add_argument("--n-covariates", type=int, default=5)
    s.add_argument("--confounding-strength", type=float, default=1.0)
    s.add_argument("--treatment-type", choices=["binary", "continuous"], default="continuous")
    s.add_argument("--confounder", choices=["gmrf", "surface"], default="gmrf")
    s.add_argument("--connectivity", choices=["rook", "queen"], default="rook")
    s.set_defaults(func=cmd_demo_collection)

    s = sub.add_parser("train-env", parents=[common], help="generate an environment bundle from a config")
    s.add_argument("config")
    s.set_defaults(func=cmd_train_env)

    s = sub.add_parser("make-dataset", parents=[common], help="mask one group of an environment")
    s.add_argument("env")
    s.add_argument("--group", default=None, help="covariate group to mask (omit for unmasked)")
    s.add_argument("--no-scores", action="store_true")
    s.set_defaults(func=cmd_make_dataset)

    s = sub.add_parser("score", parents=[common], help="smoothness and confounding scores per group")
    s.add_argument("env")
    s.add_argument("--groups", nargs="*")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("split", parents=[common], help="spatial train/validation split of a graph")
    s.add_argument("--edges", required=True)
    s.add_argument("--coords", default=None)
    s.add_argument("--alpha", type=float, default=0.02)
    s.add_argument("--levels", type=int, default=1)
    s.add_argument("--buffer", type=int, default=1)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("baseline", parents=[common], help="tune and run one estimator on a dataset")
    s.add_argument("--method", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--budget", type=int, default=None)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("evaluate", parents=[common], help="score an estimates file against a dataset")
    s.add_argument("--estimates", required=True)
    s.add_argument("--dataset", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", parents=[common], help="aggregate report.csv files across runs")
    s.add_argument("reports", nargs="+", help="report.csv files or run directories")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("run", parents=[common], help="full pipeline from a config")
    s.add_argument("config")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in GLOBAL_DEFAULTS.items():
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    limits = contextlib.nullcontext()
    if args.threads is not None:
        from threadpoolctl import threadpool_limits

        limits = threadpool_limits(args.threads)
    try:
        with limits:
            args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
