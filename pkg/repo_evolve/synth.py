import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from repo_evolve.errors import DataError
from repo_evolve.ingestion import RAW_EVENT_TYPES, REPO_COLUMNS, USER_COLUMNS
from repo_evolve.models.config import DataConfig, SynthConfig
from repo_evolve.models.events import SECONDS_PER_HOUR, TimeWindows
from repo_evolve.models.profiles import COUNTRY_CODES, LANGUAGE_CODES, RawEventRecord, UserProfile

logger = logging.getLogger(__name__)

# populations sit orders of magnitude apart in every count feature
_POPULATION_SCALE = 100.0


@dataclass
class SyntheticDataset:
    events: List[RawEventRecord]
    users: List[UserProfile]
    repos: List[Dict[str, str]]
    populations: Dict[str, int]
    process: Dict = field(default_factory=dict)


def stationary_distribution(transitions: np.ndarray) -> np.ndarray:
    """pi with pi P = pi and sum(pi) = 1, by least squares."""
    n = transitions.shape[0]
    system = np.vstack([transitions.T - np.eye(n), np.ones((1, n))])
    target = np.concatenate([np.zeros(n), [1.0]])
    pi, *_ = np.linalg.lstsq(system, target, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def bayes_accuracy(transitions: np.ndarray) -> float:
    """Best achievable next-type accuracy when the current state is known."""
    transitions = np.asarray(transitions, dtype=np.float64)
    return float(stationary_distribution(transitions) @ transitions.max(axis=1))


def _population_profile(user_id: str, population: int, rng: np.random.Generator) -> UserProfile:
    base = _POPULATION_SCALE ** (population + 1)

    def count() -> int:
        return int(round(base * rng.uniform(0.9, 1.1)))

    return UserProfile(
        user_id=user_id,
        user_type="individual",
        country=COUNTRY_CODES[(population * 37) % len(COUNTRY_CODES)],
        github_impact=round(population * 50.0 + rng.uniform(0.0, 1.0), 4),
        follower_count=count(),
        followee_count=count(),
        repos_created_count=count(),
        forks_on_created_repos=count(),
        watches_on_created_repos=count(),
    )


def _delay(config: SynthConfig, state: int, rng: np.random.Generator) -> float:
    mean = config.delay_hours[state]
    if config.gamma_shape is None or mean == 0:
        return mean
    shape = config.gamma_shape[state]
    return float(rng.gamma(shape, mean / shape))


def generate(config: SynthConfig, windows: TimeWindows) -> SyntheticDataset:
    """
    Each repo starts at a random point up to `history_hours` before
    sim_start and walks the event-type Markov chain until sim_end. Every
    event's actor comes from the population assigned to its state; creators
    each own `repos_per_creator` repos. Dormant repos stop at sim_start.
    """
    unknown = [name for name in config.event_types if name not in RAW_EVENT_TYPES]
    if unknown:
        raise DataError(f"Unknown synthetic event types {unknown}")
    rng = np.random.default_rng(config.seed)
    transitions = np.asarray(config.transitions, dtype=np.float64)
    n_states = len(config.event_types)
    n_populations = max(2, max(config.state_population) + 1)

    users: List[UserProfile] = []
    populations: Dict[str, int] = {}
    members: List[List[str]] = [[] for _ in range(n_populations)]
    for i in range(config.n_users):
        population = i % n_populations
        user_id = f"u{i:05d}"
        users.append(_population_profile(user_id, population, rng))
        populations[user_id] = population
        members[population].append(user_id)

    repos = []
    for r in range(config.n_repos):
        creator_index = r // config.repos_per_creator
        creator = members[0][creator_index % len(members[0])]
        repos.append(
            {
                "repo_id": f"r{r:05d}",
                "creator_user_id": creator,
                "main_language": LANGUAGE_CODES[creator_index % len(LANGUAGE_CODES)],
                "creator_type": "individual",
                "description": f"project {creator} tool {LANGUAGE_CODES[creator_index % len(LANGUAGE_CODES)]}",
            }
        )

    events: List[RawEventRecord] = []
    one_time = 0
    history_seconds = config.history_hours * SECONDS_PER_HOUR
    for repo in repos:
        repo_id = repo["repo_id"]
        start = windows.sim_start - int(round(history_seconds * rng.uniform(0.5, 1.0)))
        start = max(start, windows.train_start)
        end = windows.sim_start if rng.uniform() < config.dormant_fraction else windows.sim_end
        state = int(rng.integers(n_states))
        timestamp = start
        while timestamp < end:
            population = config.state_population[state]
            if rng.uniform() < config.one_time_actor_fraction:
                user_id = f"once{one_time:06d}"
                one_time += 1
                users.append(_population_profile(user_id, population, rng))
                populations[user_id] = population
            else:
                pool = members[population]
                user_id = pool[int(rng.integers(len(pool)))]
            events.append(RawEventRecord(repo_id, user_id, config.event_types[state], timestamp))
            state = int(rng.choice(n_states, p=transitions[state]))
            timestamp += int(round(_delay(config, state, rng) * SECONDS_PER_HOUR))

    process = {
        "event_types": list(config.event_types),
        "transitions": transitions.tolist(),
        "stationary": stationary_distribution(transitions).tolist(),
        "bayes_accuracy": bayes_accuracy(transitions),
        "state_population": list(config.state_population),
        "seed": config.seed,
    }
    logger.info("Generated %d events over %d repos and %d users", len(events), len(repos), len(users))
    return SyntheticDataset(events, users, repos, populations, process)


def _user_rows(users: List[UserProfile]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            (
                u.user_id, u.user_type, u.country, f"{u.github_impact:.4f}", u.follower_count, u.followee_count,
                u.repos_created_count, u.forks_on_created_repos, u.watches_on_created_repos,
            )
            for u in users
        ],
        columns=list(USER_COLUMNS),
    )


def write_dataset(dataset: SyntheticDataset, data: DataConfig) -> Tuple[Path, Path, Path]:
    """Writes the three ingestion inputs plus process.json next to the event log."""
    for path in (data.events_path, data.users_path, data.repos_path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(data.events_path, "w", encoding="utf-8", newline="\n") as file:
        for e in dataset.events:
            file.write(f"{e.repo_id}\t{e.user_id}\t{e.event_type_name}\t{e.timestamp}\n")
    _user_rows(dataset.users).to_csv(data.users_path, sep="\t", index=False, quoting=3, lineterminator="\n")
    pd.DataFrame(dataset.repos, columns=list(REPO_COLUMNS)).to_csv(
        data.repos_path, sep="\t", index=False, quoting=3, lineterminator="\n"
    )
    process_path = Path(data.events_path).with_name("process.json")
    process_path.write_text(json.dumps(dataset.process, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Wrote synthetic data to %s", Path(data.events_path).parent)
    return Path(data.events_path), Path(data.users_path), Path(data.repos_path)
