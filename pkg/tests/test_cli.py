import csv
import json

import numpy as np
import pytest

from peerbench.bootstrap import ReplicateMatrix, write_replicates
from peerbench.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def _files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe")
    assert run("synth", "--scenario", "step", "--n", 60, "--seed", 3, "--out", out) == 0
    data = ["--input", out / "data.csv", "--config", out / "config.json", "--seed", 3, "--out", out]
    assert run("fit", *data, "--ntree", 30, "--permutations", 2) == 0
    assert run("bootstrap", *data, "--B", 150, "--bootstrap-ntree", 10) == 0
    assert run("rank", *data, "--S", 1000) == 0
    return out, data


def test_synth_deterministic(tmp_path):
    for d in ("a", "b"):
        assert run("synth", "--scenario", "step", "--n", 200, "--seed", 7, "--out", tmp_path / d) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    truth = (tmp_path / "a" / "truth.csv").read_text().strip().splitlines()
    assert len(truth) == 201


def test_pipeline_outputs(pipeline):
    out, _ = pipeline
    for name in ("forest.pbf", "model.json", "model_figure.svg", "tuning.json", "replicates.csv",
                 "residual_summary.csv", "bootstrap_summary.json", "repair.json", "diagnostics.json",
                 "ranks_cohort.json", "explainers.json", "diagnostics_scatter.csv"):
        assert (out / name).is_file(), name
    dists = sorted(p.name for p in (out / "distributions").iterdir())
    assert dists == ["cohort.json", "peer_PG1.json", "peer_PG2.json", "peer_PG3.json"]
    diag = json.loads((out / "diagnostics.json").read_text())
    assert len(diag["panels"]) == 8
    summ = json.loads((out / "bootstrap_summary.json").read_text())
    assert abs(summ["presence_fraction"] - summ["expected_presence_fraction"]) < 0.02


def test_rank_scopes(pipeline, tmp_path):
    out, data = pipeline
    assert run("rank", *data, "--S", 1000, "--scope", "peer-group") == 0
    meta = json.loads((out / "rank_summary.json").read_text())
    assert meta["files"] == ["ranks_peer_PG1.json", "ranks_peer_PG2.json", "ranks_peer_PG3.json"]
    assert run("rank", *data, "--S", 1000, "--scope", "cohort") == 0
    assert json.loads((out / "rank_summary.json").read_text())["files"] == ["ranks_cohort.json"]
    assert run("rank", *data, "--S", 1000) == 0


def test_report_single_org(pipeline):
    out, data = pipeline
    assert run("report", *data, "--org", "org07") == 0
    manifest = json.loads((out / "report" / "manifest.json").read_text())
    assert manifest["organisations"] == ["org07"]
    assert sorted(f["kind"] for f in manifest["files"] if f["org_id"] == "org07") == [
        "percentile", "spirit_cohort", "spirit_peer"]
    assert {"seed", "B", "S"} <= set(manifest["provenance"])


def test_bootstrap_resume(pipeline, capsys):
    out, data = pipeline
    before = (out / "replicates.csv").stat().st_mtime_ns
    assert run("bootstrap", *data, "--B", 150, "--bootstrap-ntree", 10) == 0
    assert "up to date" in capsys.readouterr().err
    assert (out / "replicates.csv").stat().st_mtime_ns == before
    assert run("bootstrap", *data, "--B", 150, "--bootstrap-ntree", 10, "--force") == 0
    assert "up to date" not in capsys.readouterr().err


def test_fit_tune_grid_and_rerun(tmp_path):
    assert run("synth", "--scenario", "mixed14", "--n", 60, "--seed", 1, "--out", tmp_path) == 0
    args = ["fit", "--input", tmp_path / "data.csv", "--config", tmp_path / "config.json", "--seed", 1,
            "--mtry", "tune", "--ntree", 10, "--k-folds", 2, "--repeats", 1, "--permutations", 1]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    tuning = json.loads((tmp_path / "a" / "tuning.json").read_text())
    assert tuning["tuning"]["grid"] == list(range(1, 15))
    assert (tmp_path / "a" / "forest.pbf").read_bytes() == (tmp_path / "b" / "forest.pbf").read_bytes()


def test_compare_step(tmp_path):
    assert run("synth", "--scenario", "step", "--n", 200, "--seed", 2, "--out", tmp_path) == 0
    assert run("compare", "--input", tmp_path / "data.csv", "--config", tmp_path / "config.json",
               "--seed", 2, "--out", tmp_path, "--ntree", 100, "--B-boot", 300) == 0
    doc = json.loads((tmp_path / "comparison.json").read_text())
    assert doc["forest_better"] is True
    trends = sorted(p.name for p in tmp_path.glob("residual_trend_*.csv"))
    assert len(trends) == 4
    with open(tmp_path / trends[0]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["model", "grid", "mean", "se"] and len(rows) == 101


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PEERBENCH_OUTPUT_DIR", str(tmp_path / "env"))
    assert run("synth", "--scenario", "null", "--n", 20, "--seed", 0) == 0
    assert (tmp_path / "env" / "data.csv").is_file()


class TestExitCodes:
    def test_missing_input_names_path(self, tmp_path, capsys):
        code = run("fit", "--input", tmp_path / "nope.csv", "--config", tmp_path / "c.json", "--seed", 1,
                   "--out", tmp_path)
        assert code == 2
        assert "nope.csv" in capsys.readouterr().err

    def test_usage_errors(self, tmp_path):
        assert run("synth", "--scenario", "step") == 1
        assert run() == 1
        assert run("synth", "--scenario", "step", "--seed", "abc") == 1
        assert run("rank", "--input", "x", "--config", "y", "--seed", 1, "--level", 2) == 1

    def test_data_error(self, tmp_path):
        assert run("synth", "--scenario", "bogus", "--seed", 1, "--out", tmp_path) == 2

    def test_numeric_error_on_sparse_replicates(self, pipeline, tmp_path):
        out, _ = pipeline
        cfg = json.loads((out / "config.json").read_text())
        n = 60
        R = np.full((100, n), np.nan)
        R[::2, 0] = 1.0
        R[1::2, 1:] = np.random.default_rng(0).normal(size=(50, n - 1))
        ids = [f"org{i + 1:02d}" for i in range(n)]
        groups = np.array(["PG1", "PG2", "PG3"] * 20, dtype=object)
        write_replicates(tmp_path / "replicates.csv",
                         ReplicateMatrix(R, ~np.isnan(R), 0, {}, ids, groups))
        (tmp_path / "config.json").write_text(json.dumps(cfg))
        code = run("rank", "--input", out / "data.csv", "--config", tmp_path / "config.json", "--seed", 1,
                   "--out", tmp_path, "--S", 1000)
        assert code == 3
