import json
import subprocess
import sys
import textwrap

import pandas as pd
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from scbench import cli
from scbench.bundles import BANNER, read_json
from scbench.collection import demo_collection, write_collection
from scbench.config import config_digest, load_config
from scbench.errors import NumericalError, ValidationError
from scbench.pipeline import aggregate_reports, run_pipeline

SMALL = {
    "data_collection": {"demo": {"n_grid": 16, "seed": 0}},
    "seed": 0,
    "mask": ["confounder", "g1", "g2"],
    "baselines": ["ols", "spatial", "dapsm"],
    "tuning_budget": 2,
}


def write_config(path, **changes):
    cfg = {**SMALL, **changes}
    path.write_text(yaml.safe_dump(cfg))
    return path


def tree_bytes(root, skip=("manifest.json",)):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name not in skip}


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    paths = run_pipeline(write_config(d / "cfg.yaml"), d / "out")
    return d, paths


class TestPipeline:
    def test_one_bundle_per_mask(self, small_run):
        d, paths = small_run
        assert sorted(p.name for p in (d / "out" / "datasets").iterdir()) == ["confounder", "g1", "g2"]
        assert {k for k in paths if k.startswith("dataset:")} == {"dataset:confounder", "dataset:g1", "dataset:g2"}

    def test_report_contents(self, small_run):
        d, _ = small_run
        report = pd.read_csv(d / "out" / "report.csv")
        assert list(report.columns) == ["dataset", "masked_group", "method", "estimand", "error"]
        # continuous demo: dapsm is skipped, the other methods report erf and ite
        assert set(report.method) == {"ols", "spatial"}
        assert set(report.estimand) == {"erf", "ite"}
        assert len(report) == 3 * 2 * 2
        assert (report.error >= 0).all()

    def test_manifest(self, small_run):
        d, _ = small_run
        m = read_json(d / "out" / "manifest.json")
        assert m["status"] == "ok"
        assert m["config_digest"] == load_config(d / "cfg.yaml").digest
        stages = {"config", "ingest", "train-env", "make-dataset", "score", "baseline", "report"}
        assert set(m["stage_seconds"]) == stages

    def test_scores_written(self, small_run):
        d, _ = small_run
        scores = read_json(d / "out" / "scores.json")
        assert [s["group"] for s in scores] == ["confounder", "g1", "g2"]
        assert all(set(s["classification"]) == {"smoothness", "confounding"} for s in scores)

    def test_rerun_is_byte_identical(self, small_run, tmp_path):
        d, _ = small_run
        run_pipeline(d / "cfg.yaml", tmp_path / "again")
        assert tree_bytes(d / "out") == tree_bytes(tmp_path / "again")

    def test_seed_override_changes_outputs(self, small_run, tmp_path):
        d, _ = small_run
        run_pipeline(d / "cfg.yaml", tmp_path / "s1", overrides={"seed": 1})
        assert (tmp_path / "s1" / "report.csv").read_bytes() != (d / "out" / "report.csv").read_bytes()
        assert read_json(tmp_path / "s1" / "manifest.json")["config_digest"] != load_config(d / "cfg.yaml").digest

    def test_unknown_group_is_stage_tagged_and_quarantined(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.yaml", mask=["nope"], baselines=[])
        with pytest.raises(ValidationError, match=r"^\[make-dataset\] unknown covariate group") as info:
            run_pipeline(cfg, tmp_path / "out")
        assert info.value.stage == "make-dataset"
        assert not (tmp_path / "out").exists()
        assert (tmp_path / "out.failed" / "env" / "env.json").exists()

    def test_numeric_failure_is_stage_tagged(self, tmp_path, monkeypatch):
        import scbench.pipeline as pipeline

        def boom(*a, **k):
            raise ArithmeticError("overflow")

        monkeypatch.setattr(pipeline, "generate_env", boom)
        with pytest.raises(NumericalError, match=r"\[train-env\]"):
            run_pipeline(write_config(tmp_path / "cfg.yaml"), tmp_path / "out")

    def test_refuses_non_empty_output(self, tmp_path):
        (tmp_path / "out").mkdir()
        (tmp_path / "out" / "keep.txt").write_text("x")
        with pytest.raises(ValidationError, match="not empty"):
            run_pipeline(write_config(tmp_path / "cfg.yaml"), tmp_path / "out")
        assert (tmp_path / "out" / "keep.txt").exists()

    def test_ingested_collection_and_unmasked(self, tmp_path):
        write_collection(demo_collection(14, seed=1, treatment_type="binary"), tmp_path / "coll")
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text(textwrap.dedent("""\
            data_collection: coll
            treatment: treatment
            outcome: outcome
            treatment_type: binary
            covariate_groups:
              - x0
              - rest: [x1, x2, x3, x4]
            mask: [x0]
            include_unmasked: true
            scores: false
            baselines: [ols, dapsm]
            tuning_budget: 2
        """))
        run_pipeline(cfg, tmp_path / "out")
        report = pd.read_csv(tmp_path / "out" / "report.csv", keep_default_na=False)
        assert set(report.dataset) == {"x0", "unmasked"}
        assert set(report.method) == {"ols", "dapsm"}
        assert "ate" in set(report.estimand)

    def test_aggregate(self, tmp_path):
        rows = [("d", "g", "ols", "erf", e) for e in (1.0, 3.0)]
        for k, r in enumerate(rows):
            pd.DataFrame([r], columns=["dataset", "masked_group", "method", "estimand", "error"]).to_csv(
                tmp_path / f"r{k}.csv", index=False)
        agg = aggregate_reports([tmp_path / "r0.csv", tmp_path / "r1.csv"])
        row = agg.iloc[0]
        assert row.n_runs == 2 and row["mean"] == 2.0
        assert row.ci95 == pytest.approx(1.96 * 2 ** 0.5 / 2 ** 0.5)


class TestConfig:
    def test_digest_ignores_key_order(self):
        assert config_digest({"a": 1, "b": [1, 2]}) == config_digest({"b": [1, 2], "a": 1})

    @given(st.dictionaries(st.sampled_from(["seed", "mask", "tuning_budget", "scores"]),
                           st.one_of(st.integers(0, 5), st.booleans(), st.lists(st.text(max_size=3), max_size=2)),
                           min_size=1))
    def test_digest_changes_with_any_field(self, changes):
        base = {"data_collection": "x", "seed": 0}
        changed = {**base, **changes}
        assert (config_digest(changed) == config_digest(base)) == (changed == base)

    @pytest.mark.parametrize("text, where", [
        ("data_collection: x\nbogus: 1\n", "<root>"),
        ("data_collection: x\nsplit: {alpha: 1.5}\n", "split/alpha"),
        ("data_collection: x\nbaselines: [gcnn]\n", "baselines/0"),
        ("seed: 1\n", "<root>"),
    ])
    def test_schema_errors(self, tmp_path, text, where):
        (tmp_path / "c.yaml").write_text(text)
        with pytest.raises(ValidationError, match=f"config invalid at {where}"):
            load_config(tmp_path / "c.yaml")

    def test_missing_and_malformed(self, tmp_path):
        with pytest.raises(ValidationError, match="not found"):
            load_config(tmp_path / "nope.yaml")
        (tmp_path / "bad.yaml").write_text("a: [1,\n")
        with pytest.raises(ValidationError, match="malformed"):
            load_config(tmp_path / "bad.yaml")


class TestCli:
    def test_exit_codes(self, tmp_path, monkeypatch, capsys):
        assert cli.main(["ingest", str(tmp_path / "missing")]) == 2
        assert "error:" in capsys.readouterr().err

        def boom(args):
            raise NumericalError("matrix is not positive definite")

        monkeypatch.setattr(cli, "cmd_split", boom)
        assert cli.main(["split", "--edges", "e.csv"]) == 3

    def test_subcommand_chain(self, tmp_path, capsys):
        assert cli.main(["demo-collection", "--n-grid", "14", "--treatment-type", "binary",
                         "--out", str(tmp_path / "coll")]) == 0
        assert cli.main(["ingest", str(tmp_path / "coll")]) == 0
        assert json.loads(capsys.readouterr().out)["n_nodes"] == 196
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("data_collection: coll\ntreatment: treatment\noutcome: outcome\ntreatment_type: binary\n")
        assert cli.main(["--seed", "3", "train-env", str(cfg), "--out", str(tmp_path / "env")]) == 0
        assert read_json(tmp_path / "env" / "config.json")["seed"] == 3
        assert cli.main(["make-dataset", str(tmp_path / "env"), "--group", "g1", "--no-scores",
                         "--out", str(tmp_path / "ds")]) == 0
        assert cli.main(["baseline", "--method", "ols", "--dataset", str(tmp_path / "ds"),
                         "--out", str(tmp_path / "est")]) == 0
        capsys.readouterr()
        assert cli.main(["evaluate", "--estimates", str(tmp_path / "est" / "estimates.json"),
                         "--dataset", str(tmp_path / "ds")]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep == read_json(tmp_path / "est" / "report.json")
        assert cli.main(["baseline", "--method", "dapsm", "--dataset", str(tmp_path / "ds"), "--budget", "2",
                         "--out", str(tmp_path / "est2")]) == 0
        assert cli.main(["score", str(tmp_path / "env"), "--groups", "g1", "--out", str(tmp_path / "s.json")]) == 0
        assert read_json(tmp_path / "s.json")[0]["group"] == "g1"
        assert cli.main(["make-dataset", str(tmp_path / "env"), "--group", "nope",
                         "--out", str(tmp_path / "bad")]) == 2

    def test_split_command(self, tmp_path, capsys):
        edges = tmp_path / "e.csv"
        edges.write_text("".join(f"{i},{i + 1}\n" for i in range(199)))
        assert cli.main(["split", "--edges", str(edges), "--out", str(tmp_path / "m.csv")]) == 0
        roles = pd.read_csv(tmp_path / "m.csv")["role"]
        assert set(roles) == {"train", "val", "buffer"} and len(roles) == 200
        assert "train=" in capsys.readouterr().out

    def test_run_and_report(self, small_run, tmp_path, capsys):
        d, _ = small_run
        cfg = write_config(tmp_path / "cfg.yaml", baselines=["ols"], mask=["g1"])
        assert cli.main(["run", str(cfg), "--out", str(tmp_path / "r1"), "--threads", "1"]) == 0
        assert cli.main(["report", str(tmp_path / "r1"), str(d / "out"), "--out", str(tmp_path / "agg.csv")]) == 0
        agg = pd.read_csv(tmp_path / "agg.csv", keep_default_na=False)
        assert agg.set_index(["masked_group", "method", "estimand"]).loc[("g1", "ols", "erf"), "n_runs"] == 2
        assert cli.main(["run", str(cfg), "--out", str(tmp_path / "r1")]) == 2

    def test_dapsm_on_continuous_rejected(self, small_run):
        d, _ = small_run
        assert cli.main(["baseline", "--method", "dapsm", "--dataset", str(d / "out" / "datasets" / "g1"),
                         "--out", str(d / "nope")]) == 2

    def test_banner_once_per_process(self, small_run):
        d, _ = small_run
        ds = d / "out" / "datasets" / "g1"
        code = (f"from scbench.bundles import read_dataset\n"
                f"read_dataset({str(ds)!r}); read_dataset({str(ds)!r}); read_dataset({str(ds)!r})\n")
        res = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True)
        assert res.stderr.count(BANNER) == 1

    def test_help_lists_subcommands(self, capsys):
        with pytest.raises(SystemExit):
            cli.main(["--help"])
        out = capsys.readouterr().out
        for name in ("ingest", "demo-collection", "train-env", "make-dataset", "score", "split",
                     "baseline", "evaluate", "report", "run"):
            assert name in out
