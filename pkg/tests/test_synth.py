from collections import Counter, defaultdict

import numpy as np
import pytest

from repo_evolve.errors import DataError
from repo_evolve.ingestion import load_repo_profiles, load_user_profiles, read_event_file
from repo_evolve.models.config import DataConfig, SynthConfig
from repo_evolve.models.events import TimeWindows
from repo_evolve.synth import bayes_accuracy, generate, stationary_distribution, write_dataset
from tests.conftest import T0, hours

WINDOWS = TimeWindows(T0, hours(100), hours(100), hours(150), hours(150), hours(200))


def _data_config(root):
    return DataConfig(
        events_path=root / "events.tsv", users_path=root / "users.tsv", repos_path=root / "repos.tsv", work_dir=root
    )


def test_bayes_accuracy():
    cycle = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    assert bayes_accuracy(cycle) == pytest.approx(1.0)
    assert stationary_distribution(cycle) == pytest.approx([1 / 3] * 3)

    mixing = np.array([[0.5, 0.5], [0.5, 0.5]])
    assert bayes_accuracy(mixing) == pytest.approx(0.5)


def test_same_seed_writes_identical_files(tmp_path):
    config = SynthConfig(n_repos=20, n_users=30, history_hours=80.0, one_time_actor_fraction=0.1)
    paths = []
    for name in ("a", "b"):
        root = tmp_path / name
        paths.append(write_dataset(generate(config, WINDOWS), _data_config(root)) + (root / "process.json",))
    for first, second in zip(*paths):
        assert first.read_bytes() == second.read_bytes()


def test_generated_files_ingest_cleanly(tmp_path):
    config = SynthConfig(n_repos=15, n_users=20, history_hours=80.0, one_time_actor_fraction=0.2)
    dataset = generate(config, WINDOWS)
    events, users, repos = write_dataset(dataset, _data_config(tmp_path))

    result = read_event_file(events, max_reject_ratio=0.0)
    assert result.rejected_count == 0
    assert len(result.chains) == 15
    assert result.event_count == len(dataset.events)
    assert len(load_user_profiles(users)) == len(dataset.users)
    assert set(load_repo_profiles(repos)) == {f"r{i:05d}" for i in range(15)}


def test_transition_frequencies_follow_the_process():
    transitions = [[0.2, 0.5, 0.3], [0.6, 0.1, 0.3], [0.3, 0.3, 0.4]]
    config = SynthConfig(n_repos=200, n_users=40, transitions=transitions, history_hours=150.0, seed=3)
    dataset = generate(config, WINDOWS)

    by_repo = defaultdict(list)
    for event in dataset.events:
        by_repo[event.repo_id].append(config.event_types.index(event.event_type_name))
    counts = np.zeros((3, 3))
    for states in by_repo.values():
        for a, b in zip(states, states[1:]):
            counts[a, b] += 1
    observed = counts / counts.sum(axis=1, keepdims=True)
    assert np.abs(observed - np.array(transitions)).max() < 0.03


def test_event_actors_come_from_state_population():
    dataset = generate(SynthConfig(n_repos=10, n_users=20, history_hours=50.0), WINDOWS)
    populations = Counter(
        (event.event_type_name, dataset.populations[event.user_id]) for event in dataset.events
    )
    assert all(population == (1 if name == "Watch" else 0) for name, population in populations)


def test_repos_stay_inside_the_windows():
    dataset = generate(SynthConfig(n_repos=10, n_users=10, history_hours=500.0), WINDOWS)
    assert all(WINDOWS.train_start <= e.timestamp < WINDOWS.sim_end for e in dataset.events)

    dormant = generate(SynthConfig(n_repos=10, n_users=10, history_hours=50.0, dormant_fraction=1.0), WINDOWS)
    assert all(e.timestamp < WINDOWS.sim_start for e in dormant.events)


def test_unknown_event_types_are_rejected():
    config = SynthConfig(event_types=["Push", "Teleport", "Watch"])
    with pytest.raises(DataError):
        generate(config, WINDOWS)
