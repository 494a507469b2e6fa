import json
import os

import pytest
import yaml

from tf_edgead.app.pipeline import SWEEP_HEADER
from tf_edgead.data import ALL_ZERO_MAJORITY, COLLINEAR, MetricSubset
from tf_edgead.evaluation import EvaluationReport
from tf_edgead.main import main
from tf_edgead.similarity import SimilarityGraph
from tf_edgead.utils import load_config_file

FLEET_SPEC = """
n_devices: 4
n_clusters_true: 2
n_metrics: 3
t_train: 200
t_test: 120
duration: 10
cluster_separation: 3.0
"""

CONFIG = """
data:
  root: fleet
  top_n: 3
  window_size: 5
similarity:
  bins: 20
clustering:
  k: 2
model:
  num_layers: 2
  hidden_size: 4
  batch_size: 32
  learning_rate: 0.01
  max_epochs: 2
  transfer_max_epochs: 1
  early_stopping: false
"""

PIPELINE = [
    "inspect",
    "select-metrics",
    "similarity",
    "cluster",
    "plan",
    "train",
    "evaluate",
    "report",
]


def _write(path, text):
    with open(path, "w") as f:
        f.write(text)
    return path


def _manifest(run_dir):
    with open(os.path.join(run_dir, "manifest.json")) as f:
        return json.load(f)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cmd")
    spec = _write(str(root / "spec.yml"), FLEET_SPEC)
    fleet = str(root / "fleet")
    assert main(["genfleet", "--spec", spec, "--out", fleet]) == 0
    config = _write(str(root / "config.yml"), CONFIG)
    out = str(root / "runs")
    for stage in PIPELINE:
        assert main([stage, "--config", config, "--out", out]) == 0, stage
    return config, out, os.path.join(out, "default")


def _args(workspace, *extra):
    config, out, _ = workspace
    return list(extra) + ["--config", config, "--out", out]


def test_full_pipeline(workspace):
    _, _, run_dir = workspace
    manifest = _manifest(run_dir)
    assert manifest["run_id"] == "default"
    stages = set(manifest["stages"])
    for s in ["inspect", "select-metrics", "similarity", "cluster", "plan"]:
        assert s in stages
    for s in ["gm", "mpd", "cm", "icptl"]:
        assert "train:" + s in stages
        assert os.path.exists(os.path.join(run_dir, "models", s))
    assert {"evaluate", "report"} <= stages
    for name in ["graph.csv", "clusters.yml", "plan.yml", "report.txt"]:
        assert os.path.exists(os.path.join(run_dir, name))
    with open(os.path.join(run_dir, "clusters.yml")) as f:
        clusters = yaml.safe_load(f)
    assert len(clusters["clusters"]) == 2
    assert manifest["config"]["clustering"]["k"] == 2


def test_rerun_skips(workspace, capsys):
    capsys.readouterr()
    assert main(_args(workspace, "similarity")) == 0
    assert main(_args(workspace, "train", "--strategy", "gm")) == 0
    out = capsys.readouterr().out
    assert "similarity: up to date" in out
    assert "train gm: up to date" in out


def test_force_rerun_deterministic(workspace, capsys):
    _, _, run_dir = workspace
    names = ["graph", "clusters", "plan", "models:gm"]
    before = _manifest(run_dir)["artifacts"]
    for stage in ["similarity", "cluster", "plan"]:
        assert main(_args(workspace, stage, "--force")) == 0
    assert main(_args(workspace, "train", "--strategy", "gm", "--force")) == 0
    after = _manifest(run_dir)["artifacts"]
    for n in names:
        assert after[n]["sha256"] == before[n]["sha256"], n
    assert after["profile"]["volatile"]
    assert "train gm: done" in capsys.readouterr().out


def test_missing_stage(workspace, capsys):
    capsys.readouterr()
    ret = main(_args(workspace, "cluster", "--run-id", "fresh"))
    assert ret == 2
    err = capsys.readouterr().err
    assert err.startswith("error StageDependencyMissing:")


def test_report_prints_table(workspace, capsys):
    capsys.readouterr()
    assert main(_args(workspace, "report")) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].split()[0] == "strategy"
    for s in ["gm", "mpd", "cm", "icptl"]:
        assert s in out


def test_sweep_k(workspace, capsys):
    capsys.readouterr()
    args = _args(workspace, "sweep-k", "--k", "1-2", "--strategy", "cm")
    assert main(args) == 0
    lines = capsys.readouterr().out.splitlines()
    start = lines.index(SWEEP_HEADER)
    rows = [i.split(",") for i in lines[start + 1 :]]
    assert [r[:2] for r in rows] == [["1", "cm"], ["2", "cm"]]
    assert [r[4] for r in rows] == ["1", "2"]


def test_fleet_event_dry_run(workspace, capsys):
    _, _, run_dir = workspace
    clusters = _manifest(run_dir)["artifacts"]["clusters"]["sha256"]
    args = _args(
        workspace, "fleet-event", "device_removed", "device-00", "--dry-run"
    )
    assert main(args) == 0
    assert "fleet-event: planned" in capsys.readouterr().out
    with open(os.path.join(run_dir, "fleet_actions.yml")) as f:
        actions = yaml.safe_load(f)
    assert actions["dry_run"] is True
    assert actions["event"] == "device_removed"
    assert "device-00" not in sum(actions["clusters"].values(), [])
    manifest = _manifest(run_dir)
    assert manifest["artifacts"]["clusters"]["sha256"] == clusters


def test_bad_config(tmp_path, capsys):
    config = _write(str(tmp_path / "bad.yml"), "data:\n  windowsize: 3\n")
    ret = main(["inspect", "--config", config, "--out", str(tmp_path)])
    assert ret == 2
    err = capsys.readouterr().err
    assert err.startswith("error ConfigInvalid:")
    assert "data.windowsize" in err


def test_genfleet(tmp_path, capsys):
    out = str(tmp_path / "fleet")
    assert main(["genfleet", "--out", out, "--seed", "3"]) == 0
    assert "9 devices in 3 clusters" in capsys.readouterr().out
    with open(os.path.join(out, "truth.yml")) as f:
        truth = yaml.safe_load(f)
    assert truth["spec"]["seed"] == 3
    assert len(os.listdir(os.path.join(out, "train"))) == 9


def test_usage(capsys):
    assert main(["help"]) == 0
    assert "fleet-event" in capsys.readouterr().out
    assert main([]) == 2
    with pytest.raises(SystemExit) as e:
        main(["cluster", "--k", "x"])
    assert e.value.code == 2


SMD_CONFIG = """
data:
  root: {}
  top_n: 6
clustering:
  k: 5
"""


@pytest.mark.skipif(
    "TF_EDGEAD_SMD_ROOT" not in os.environ,
    reason="set TF_EDGEAD_SMD_ROOT to the 14 device Server Machine Dataset "
    "subset; the full pipeline takes up to an hour",
)
def test_smd_subset(tmp_path):
    config = _write(
        str(tmp_path / "smd.yml"),
        SMD_CONFIG.format(os.environ["TF_EDGEAD_SMD_ROOT"]),
    )
    args = ["--config", config, "--out", str(tmp_path)]
    for stage in PIPELINE:
        assert main([stage] + args) == 0, stage
    run_dir = str(tmp_path / "default")

    subset = MetricSubset.from_dict(
        load_config_file(os.path.join(run_dir, "metrics.yml"))
    )
    ranked = sorted(
        subset.rationale, key=lambda m: -subset.rationale[m].variance_of_mean
    )
    assert set(ranked[:6]) == {23, 6, 24, 26, 7, 5}
    assert set(subset.indices) == {23, 6, 24, 7}
    assert subset.rationale[5].reason == ALL_ZERO_MAJORITY
    assert subset.rationale[26].reason == COLLINEAR
    assert subset.rationale[26].collinear_with == 24

    graph = SimilarityGraph.load(os.path.join(run_dir, "graph.csv"))
    assert len(graph) == 14
    assert len(list(graph.edges())) == 91

    report = EvaluationReport.load(os.path.join(run_dir, "evaluation.csv"))
    assert report.mean_auc("mpd") >= 0.80
    assert report.mean_auc("gm") <= report.mean_auc("mpd") - 0.10
