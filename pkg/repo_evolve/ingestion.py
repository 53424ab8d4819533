import hashlib
import logging
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Union

import numpy as np
import pandas as pd

from repo_evolve.errors import DataError
from repo_evolve.models.events import (
    CONCRETE_EVENT_TYPES,
    MONTH_HOURS,
    MONTH_SECONDS,
    Event,
    EventChain,
    EventType,
    delay_between,
)
from repo_evolve.models.profiles import (
    DESCRIPTION_DIM,
    RawEventRecord,
    RepoProfile,
    UserProfile,
    language_code,
    user_type_onehot,
)

logger = logging.getLogger(__name__)

MIN_TIMESTAMP = 0
# 2100-01-01T00:00:00Z
MAX_TIMESTAMP = 4_102_444_800

# GitHub archive names ("PushEvent") and bare labels ("Push") are both accepted.
RAW_EVENT_TYPES: Dict[str, EventType] = {}
for _event_type in CONCRETE_EVENT_TYPES:
    RAW_EVENT_TYPES[_event_type.label] = _event_type
    RAW_EVENT_TYPES[_event_type.label + "Event"] = _event_type

USER_COLUMNS = (
    "user_id",
    "user_type",
    "country",
    "github_impact",
    "followers",
    "followees",
    "repos_created",
    "forks_on_created_repos",
    "watches_on_created_repos",
)
REPO_COLUMNS = ("repo_id", "creator_user_id", "main_language", "creator_type", "description")

_LOG10_SCALE = 10.0 / math.log(10.0)
_TOKEN = re.compile(r"[a-z0-9]+")

Number = Union[float, np.ndarray]


@dataclass
class IngestResult:
    chains: Dict[str, EventChain]
    total_lines: int = 0
    rejected: Counter = field(default_factory=Counter)

    @property
    def rejected_count(self) -> int:
        return sum(self.rejected.values())

    @property
    def reject_ratio(self) -> float:
        return self.rejected_count / self.total_lines if self.total_lines else 0.0

    @property
    def event_count(self) -> int:
        return sum(len(chain) - 1 for chain in self.chains.values())


def encode_delay(hours: Number) -> Number:
    """10*log10(hours + 1), computed through log1p."""
    values = np.asarray(hours, dtype=np.float64)
    if np.any(values < 0) or np.any(np.isnan(values)):
        raise DataError(f"Delays must be non-negative, got {hours!r}")
    encoded = np.log1p(values) * _LOG10_SCALE
    return float(encoded) if encoded.ndim == 0 else encoded


def decode_delay(encoded: Number) -> Number:
    values = np.asarray(encoded, dtype=np.float64)
    if np.any(values < 0) or np.any(np.isnan(values)):
        raise DataError(f"Encoded delays must be non-negative, got {encoded!r}")
    hours = np.expm1(values / _LOG10_SCALE)
    return float(hours) if hours.ndim == 0 else hours


def parse_event_line(line: str) -> RawEventRecord:
    parts = line.rstrip("\r\n").split("\t")
    if len(parts) != 4:
        raise DataError(f"Expected 4 tab-separated fields, got {len(parts)}")
    repo_id, user_id, type_name, raw_timestamp = parts
    if not repo_id or not user_id:
        raise DataError("Empty repo or user id")
    try:
        timestamp = int(raw_timestamp)
    except ValueError:
        raise DataError(f"Bad timestamp {raw_timestamp!r}") from None
    return RawEventRecord(repo_id, user_id, type_name, timestamp)


def parse_event_log(records: Iterable[RawEventRecord]) -> IngestResult:
    """
    Groups records by repo into chains: sorted by timestamp (stable on ties),
    SOC prepended at the first real timestamp, delays filled in.
    """
    by_repo: Dict[str, List[RawEventRecord]] = defaultdict(list)
    result = IngestResult(chains={})
    for record in records:
        result.total_lines += 1
        if record.event_type_name not in RAW_EVENT_TYPES:
            result.rejected["unknown_event_type"] += 1
            continue
        if not MIN_TIMESTAMP <= record.timestamp < MAX_TIMESTAMP:
            result.rejected["timestamp_out_of_range"] += 1
            continue
        by_repo[record.repo_id].append(record)

    for repo_id in sorted(by_repo):
        result.chains[repo_id] = build_chain(repo_id, by_repo[repo_id])

    if result.rejected:
        logger.info("Rejected %d of %d records: %s", result.rejected_count, result.total_lines, dict(result.rejected))
    return result


def build_chain(repo_id: str, records: List[RawEventRecord]) -> EventChain:
    ordered = sorted(records, key=lambda r: r.timestamp)
    first = ordered[0].timestamp
    events = [Event(EventType.SOC, None, first, 0.0)]
    actors: List[Optional[str]] = [None]
    previous = first
    for record in ordered:
        events.append(
            Event(RAW_EVENT_TYPES[record.event_type_name], None, record.timestamp, delay_between(previous, record.timestamp))
        )
        actors.append(record.user_id)
        previous = record.timestamp
    return EventChain(repo_id, tuple(events), tuple(actors))


def iter_event_file(path: Path, rejected: Counter) -> Iterator[RawEventRecord]:
    with open(path, "r", encoding="utf-8") as file:
        for line_number, line in enumerate(file, start=1):
            if not line.strip():
                continue
            try:
                yield parse_event_line(line)
            except DataError as error:
                rejected["malformed"] += 1
                logger.debug("%s:%d skipped: %s", path, line_number, error)


def read_event_file(path: Path, max_reject_ratio: float = 0.01) -> IngestResult:
    """Reads the events file; fails only when the rejected share exceeds the threshold."""
    path = Path(path)
    malformed: Counter = Counter()
    result = parse_event_log(iter_event_file(path, malformed))
    result.total_lines += sum(malformed.values())
    result.rejected.update(malformed)
    logger.info(
        "Read %d lines from %s: %d repos, %d events, %d rejected",
        result.total_lines, path, len(result.chains), result.event_count, result.rejected_count,
    )
    if result.reject_ratio > max_reject_ratio:
        raise DataError(
            f"{result.rejected_count} of {result.total_lines} lines rejected in {path} "
            f"({result.reject_ratio:.2%} > {max_reject_ratio:.2%}): {dict(result.rejected)}"
        )
    return result


def inject_no_event(chain: EventChain, artificial_group: Optional[int] = None) -> EventChain:
    """
    Inserts one NoEventForOneMonth event per full 720h of inactivity between
    consecutive events, spaced exactly 720h apart after the earlier event.
    """
    if not chain.events:
        return chain
    events = [chain.events[0]]
    actors = [chain.actors[0]]
    for event, actor in zip(chain.events[1:], chain.actors[1:]):
        previous = events[-1].timestamp
        for step in range(1, (event.timestamp - previous) // MONTH_SECONDS + 1):
            events.append(
                Event(EventType.NO_EVENT_FOR_ONE_MONTH, artificial_group, previous + step * MONTH_SECONDS, float(MONTH_HOURS))
            )
            actors.append(None)
        last = events[-1].timestamp
        if last != previous:
            event = Event(event.event_type, event.user_group, event.timestamp, delay_between(last, event.timestamp))
        events.append(event)
        actors.append(actor)
    return EventChain(chain.repo_id, tuple(events), tuple(actors))


def strip_no_event(chain: EventChain) -> EventChain:
    kept = [(e, a) for e, a in zip(chain.events, chain.actors) if e.event_type != EventType.NO_EVENT_FOR_ONE_MONTH]
    if not kept:
        return EventChain(chain.repo_id)
    events = [kept[0][0]]
    for event, _ in kept[1:]:
        delay = delay_between(events[-1].timestamp, event.timestamp)
        events.append(Event(event.event_type, event.user_group, event.timestamp, delay))
    return EventChain(chain.repo_id, tuple(events), tuple(a for _, a in kept))


def _token_vector(token: str) -> np.ndarray:
    seed = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
    vector = np.random.default_rng(seed).standard_normal(DESCRIPTION_DIM)
    return vector / np.linalg.norm(vector)


def vectorize_description(text: str) -> np.ndarray:
    """Average of per-token unit vectors seeded by a hash of the token."""
    tokens = _TOKEN.findall((text or "").lower())
    if not tokens:
        return np.zeros(DESCRIPTION_DIM)
    return np.mean([_token_vector(token) for token in tokens], axis=0)


def _read_table(path: Path, columns: Iterable[str]) -> pd.DataFrame:
    path = Path(path)
    frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False, quoting=3)
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataError(f"{path} is missing columns {missing}")
    return frame


def load_user_profiles(path: Path) -> Dict[str, UserProfile]:
    frame = _read_table(path, USER_COLUMNS)
    counts = ["followers", "followees", "repos_created", "forks_on_created_repos", "watches_on_created_repos"]
    numeric = frame[counts + ["github_impact"]].apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1) | (numeric[counts] < 0).any(axis=1)
    if bad.any():
        logger.warning("Dropping %d user rows with invalid numbers from %s", int(bad.sum()), path)
    profiles = {}
    for row, values in zip(frame[~bad].itertuples(index=False), numeric[~bad].itertuples(index=False)):
        profiles[row.user_id] = UserProfile(
            user_id=row.user_id,
            user_type=row.user_type,
            country=row.country,
            github_impact=float(values.github_impact),
            follower_count=int(values.followers),
            followee_count=int(values.followees),
            repos_created_count=int(values.repos_created),
            forks_on_created_repos=int(values.forks_on_created_repos),
            watches_on_created_repos=int(values.watches_on_created_repos),
        )
    logger.info("Loaded %d user profiles from %s", len(profiles), path)
    return profiles


def load_repo_profiles(path: Path) -> Dict[str, RepoProfile]:
    frame = _read_table(path, REPO_COLUMNS)
    profiles = {}
    for row in frame.itertuples(index=False):
        profiles[row.repo_id] = RepoProfile(
            repo_id=row.repo_id,
            creator_user_id=row.creator_user_id,
            main_language_id=language_code(row.main_language),
            creator_type_onehot=user_type_onehot(row.creator_type),
            description_vector=vectorize_description(row.description),
        )
    logger.info("Loaded %d repo profiles from %s", len(profiles), path)
    return profiles
