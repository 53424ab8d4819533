import json

import pandas as pd
import pytest
from click.testing import CliRunner

from repo_evolve.__main__ import cli
from tests.conftest import hours

PIPELINE = (
    ["synth"],
    ["ingest"],
    ["group-users", "--scan-k"],
    ["embed-repos"],
    ["train"],
    ["simulate"],
    ["predict"],
    ["baseline", "random"],
    ["baseline", "previous"],
    ["baseline", "noevent"],
    ["evaluate"],
)


def invoke(config_path, *args):
    return CliRunner().invoke(cli, ["--config", str(config_path), "--threads", "1", *args])


def run_ok(config_path, *args):
    result = invoke(config_path, *args)
    assert result.exit_code == 0, result.output
    return result


def run_pipeline(config_path):
    for args in PIPELINE:
        run_ok(config_path, *args)


def test_full_pipeline(tiny_config_path, tmp_path):
    run_pipeline(tiny_config_path)
    work = tmp_path / "work"
    for name in (
        "chains.tsv", "groups.bundle", "group_scan.tsv", "embeddings.bundle", "model.bundle", "history.tsv",
        "simulation.tsv", "prediction.tsv", "baseline_random.tsv", "truth.tsv", "report.tsv", "report.json",
    ):
        assert (work / name).is_file(), name
    assert (work / "manifests" / "train.json").is_file()
    assert (tmp_path / "data" / "process.json").is_file()

    summary = json.loads((work / "report.json").read_text())
    assert 0.0 <= summary["event_type"]["map"] <= 1.0
    assert summary["counts"]["mae"] >= 0.0
    manifest = json.loads((work / "simulation.manifest.json").read_text())
    assert summary["repos"] == len(manifest["repos"]) > 0

    result = run_ok(tiny_config_path, "evaluate", "--run", "baseline_noevent", "--out", "noevent")
    assert "report" in result.output
    assert (work / "noevent.json").is_file()

    run_ok(tiny_config_path, "embed-repos", "--apply-to", str(tmp_path / "data" / "repos.tsv"))
    assert (work / "embeddings.repos.bundle").is_file()


def test_evaluating_truth_against_itself(tiny_config_path, tmp_path):
    run_pipeline(tiny_config_path)
    truth = tmp_path / "work" / "truth.tsv"
    run_ok(tiny_config_path, "evaluate", "--predictions", str(truth), "--truth", str(truth), "--out", "self")
    summary = json.loads((tmp_path / "work" / "self.json").read_text())
    assert summary["event_type"]["bleu"]["1"]["mean"] == 1.0
    assert summary["user_group"]["map"] == 1.0
    assert summary["time_delay"]["dtw"] == 0.0
    assert summary["counts"]["mae"] == 0.0


def test_reruns_are_byte_identical(tiny_config_path, tmp_path):
    work = tmp_path / "work"
    run_pipeline(tiny_config_path)
    names = ("embeddings.bundle", "model.bundle", "simulation.tsv", "report.json")
    first = {name: (work / name).read_bytes() for name in names}
    run_pipeline(tiny_config_path)
    for name, content in first.items():
        assert (work / name).read_bytes() == content, name


def test_missing_artifact_exits_with_data_error(tiny_config_path):
    result = invoke(tiny_config_path, "train")
    assert result.exit_code == 2
    assert "repo-evolve ingest" in result.output


@pytest.mark.parametrize("override", ["model.dropout=2", "grouping.n_groups=0", "nosuch.key=1"])
def test_bad_config_exits_with_config_error(tiny_config_path, override):
    result = invoke(tiny_config_path, "--set", override, "ingest")
    assert result.exit_code == 1
    assert "invalid config" in result.output


def test_gradcheck_command(tiny_config_path):
    result = run_ok(tiny_config_path, "gradcheck")
    assert [line.split(":")[0] for line in result.output.strip().splitlines()[-4:]] == [
        "type", "delay", "group", "combined"
    ]


def test_encode_dumps_rows_per_event(tiny_config_path, tmp_path):
    for args in (["synth"], ["ingest"], ["group-users"], ["embed-repos"]):
        run_ok(tiny_config_path, *args)
    out = tmp_path / "encoded.tsv"
    run_ok(tiny_config_path, "encode", "--out", str(out), "--repo", "r00000")

    table = pd.read_csv(out, sep="\t")
    # 12 types + delay + 4 groups + 28 activity + 8-d embedding
    assert list(table.columns[:4]) == ["repo_id", "position", "event_type", "timestamp"]
    assert len(table.columns) == 4 + 53
    assert set(table["repo_id"]) == {"r00000"}
    assert table["position"].tolist() == list(range(len(table)))
    assert table.loc[0, "event_type"] == "SOC"
    assert table.loc[0, "type_10"] == 1.0
    assert (table[[f"type_{i}" for i in range(12)]].sum(axis=1) == 1.0).all()

    result = invoke(tiny_config_path, "encode", "--out", str(out), "--repo", "nosuch")
    assert result.exit_code == 2


def test_truth_does_not_depend_on_the_no_event_flag(tiny_config_path, tmp_path):
    run_ok(tiny_config_path, "synth")
    with open(tmp_path / "data" / "events.tsv", "a", encoding="utf-8") as file:
        file.write(f"quiet\tu00000\tPush\t{hours(1)}\n")
        file.write(f"quiet\tu00000\tWatch\t{hours(1500)}\n")
    long_windows = []
    for key, h in (("train_end", 800), ("val_start", 800), ("val_end", 900), ("sim_start", 900), ("sim_end", 2000)):
        long_windows += ["--set", f"windows.{key}={hours(h)}"]
    for args in (["ingest"], ["group-users"], ["embed-repos"], ["baseline", "noevent"]):
        run_ok(tiny_config_path, *long_windows, *args)
    truth = tmp_path / "work" / "truth.tsv"
    injected = truth.read_text(encoding="utf-8")

    run_ok(tiny_config_path, *long_windows, "--set", "features.use_no_event_type=false", "baseline", "noevent")
    assert truth.read_text(encoding="utf-8") == injected
    quiet = [line.split("\t") for line in injected.splitlines() if line.startswith("quiet\t")]
    assert [row[1] for row in quiet] == ["NoEventForOneMonth", "Watch"]
    assert int(quiet[0][3]) == hours(1441)
