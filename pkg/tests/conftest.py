from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pytest

from repo_evolve.grouping import USER_FEATURE_DIM, UserGroupModel
from repo_evolve.ingestion import build_chain
from repo_evolve.models.events import SECONDS_PER_HOUR, EventChain, TimeWindows
from repo_evolve.models.profiles import RawEventRecord

T0 = 1_500_000_000
HOUR = SECONDS_PER_HOUR


def hours(h: float) -> int:
    return T0 + int(round(h * HOUR))


def make_chain(repo_id: str, events: Sequence[Tuple[str, str, float]]) -> EventChain:
    """(type label, actor, hours after T0) triples; SOC is added."""
    return build_chain(repo_id, [RawEventRecord(repo_id, actor, label, hours(h)) for label, actor, h in events])


def group_model(n_groups: int = 2, assignment: Optional[Dict[str, int]] = None) -> UserGroupModel:
    return UserGroupModel(
        n_groups,
        np.arange(n_groups * USER_FEATURE_DIM, dtype=np.float64).reshape(n_groups, USER_FEATURE_DIM),
        np.zeros(USER_FEATURE_DIM),
        np.ones(USER_FEATURE_DIM),
        assignment or {},
    )


@pytest.fixture
def windows() -> TimeWindows:
    return TimeWindows(T0, hours(200), hours(200), hours(240), hours(240), hours(288))


def tiny_config_toml(root: Path) -> str:
    return f"""
[data]
events_path = "{(root / 'data' / 'events.tsv').as_posix()}"
users_path = "{(root / 'data' / 'users.tsv').as_posix()}"
repos_path = "{(root / 'data' / 'repos.tsv').as_posix()}"
work_dir = "{(root / 'work').as_posix()}"

[windows]
train_start = {T0}
train_end = {hours(60)}
val_start = {hours(60)}
val_end = {hours(72)}
sim_start = {hours(72)}
sim_end = {hours(96)}

[grouping]
n_groups = 3
scan_k = [2, 3]

[embedding]
dim = 8
epochs = 2
neighbor_samples = [2, 2]
negatives = 2

[model]
lstm_hidden = [8, 6]
branch_hidden = [8, 4]
window_size = 5
batch_size = 64
epochs = 2
learning_rate = 0.01

[simulation]
max_events_per_repo = 500

[synth]
n_repos = 12
n_users = 12
history_hours = 72.0
"""


@pytest.fixture
def tiny_config_path(tmp_path) -> Path:
    path = tmp_path / "config.toml"
    path.write_text(tiny_config_toml(tmp_path), encoding="utf-8")
    return path
