import numpy as np
import pytest

from repo_evolve import main
from repo_evolve.models.config import build_config
from tests.conftest import T0, hours


def _accuracy(predictions, truth):
    hits = total = 0
    for repo_id, events in truth.items():
        predicted = predictions.get(repo_id, [])
        for p, t in zip(predicted, events):
            hits += p.event.event_type == t.event.event_type
        total += len(events)
    return hits / total


@pytest.mark.slow
def test_model_recovers_a_deterministic_cycle(tmp_path):
    config = build_config(
        {
            "data": {
                "events_path": str(tmp_path / "data" / "events.tsv"),
                "users_path": str(tmp_path / "data" / "users.tsv"),
                "repos_path": str(tmp_path / "data" / "repos.tsv"),
                "work_dir": str(tmp_path / "work"),
            },
            "windows": {
                "train_start": T0, "train_end": hours(150), "val_start": hours(150),
                "val_end": hours(170), "sim_start": hours(170), "sim_end": hours(218),
            },
            "synth": {"n_repos": 200, "n_users": 100, "history_hours": 170.0},
            "grouping": {"n_groups": 10},
            "embedding": {"dim": 16, "epochs": 2},
            "model": {
                "lstm_hidden": [32, 16], "branch_hidden": [32, 16], "epochs": 20,
                "dropout": 0.1, "learning_rate": 0.005,
            },
            "simulation": {"max_events_per_repo": 2000},
        }
    )
    process = main.run_synth(config)
    assert process["bayes_accuracy"] == pytest.approx(1.0)
    main.run_ingest(config)
    main.run_group_users(config)
    main.run_embed_repos(config)
    main.run_train(config)

    workspace = main.Workspace(config.data.work_dir)
    main.run_predict(config)
    truth = main.read_predictions(workspace.truth, "predict")
    predicted = main.read_predictions(workspace.run_table("prediction"), "predict")
    assert _accuracy(predicted, truth) >= 0.9

    main.run_simulate(config)
    report = main.run_evaluate(config, workspace.run_table("simulation"))
    assert report.value("time_delay", "dtw") <= 10.0

    main.run_baseline(config, "random")
    truth = main.read_predictions(workspace.truth, "baseline")
    random_predictions = main.read_predictions(workspace.run_table("baseline_random"), "baseline")
    assert _accuracy(random_predictions, truth) <= 0.45
    assert np.isfinite(report.value("event_type", "map"))
