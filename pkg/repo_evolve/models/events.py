from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Tuple

from repo_evolve.errors import DataError

SECONDS_PER_HOUR = 3600
MONTH_HOURS = 720
MONTH_SECONDS = MONTH_HOURS * SECONDS_PER_HOUR


class EventType(IntEnum):
    """Event labels. Values 0..11 are model classes, in one-hot order."""

    CREATE = 0
    DELETE = 1
    FORK = 2
    ISSUES = 3
    ISSUE_COMMENT = 4
    PULL_REQUEST = 5
    PULL_REQUEST_REVIEW_COMMENT = 6
    PUSH = 7
    COMMIT_COMMENT = 8
    WATCH = 9
    SOC = 10
    NO_EVENT_FOR_ONE_MONTH = 11
    # evaluation-only placeholder, never a model class
    NO_EVENT_IN_SIM_PERIOD = 12

    @property
    def label(self) -> str:
        return _LABELS[self]

    @property
    def is_model_class(self) -> bool:
        return self < NUM_EVENT_TYPES

    @property
    def is_concrete(self) -> bool:
        return self < EventType.SOC

    @classmethod
    def from_label(cls, label: str) -> "EventType":
        try:
            return _BY_LABEL[label]
        except KeyError:
            raise DataError(f"Unknown event type {label!r}") from None


_LABELS = {
    EventType.CREATE: "Create",
    EventType.DELETE: "Delete",
    EventType.FORK: "Fork",
    EventType.ISSUES: "Issues",
    EventType.ISSUE_COMMENT: "IssueComment",
    EventType.PULL_REQUEST: "PullRequest",
    EventType.PULL_REQUEST_REVIEW_COMMENT: "PullRequestReviewComment",
    EventType.PUSH: "Push",
    EventType.COMMIT_COMMENT: "CommitComment",
    EventType.WATCH: "Watch",
    EventType.SOC: "SOC",
    EventType.NO_EVENT_FOR_ONE_MONTH: "NoEventForOneMonth",
    EventType.NO_EVENT_IN_SIM_PERIOD: "NoEventInSimPeriod",
}
_BY_LABEL = {label: event_type for event_type, label in _LABELS.items()}

NUM_EVENT_TYPES = 12
CONCRETE_EVENT_TYPES: Tuple[EventType, ...] = tuple(EventType(i) for i in range(EventType.SOC))


@dataclass(frozen=True)
class Event:
    event_type: EventType
    # None for SOC and the evaluation placeholder
    user_group: Optional[int]
    timestamp: int
    delay_hours: float = 0.0

    def with_group(self, user_group: Optional[int]) -> "Event":
        return Event(self.event_type, user_group, self.timestamp, self.delay_hours)


def delay_between(previous_timestamp: int, timestamp: int) -> float:
    return (timestamp - previous_timestamp) / SECONDS_PER_HOUR


@dataclass(frozen=True)
class EventChain:
    """Chronological events of one repository.

    `actors` runs parallel to `events` and keeps the raw user id behind each
    real event (None for SOC, artificial and predicted events). Events
    themselves only carry the user group.
    """

    repo_id: str
    events: Tuple[Event, ...] = ()
    actors: Tuple[Optional[str], ...] = field(default=(), compare=True)

    def __post_init__(self):
        if not isinstance(self.events, tuple):
            object.__setattr__(self, "events", tuple(self.events))
        if not self.actors:
            object.__setattr__(self, "actors", (None,) * len(self.events))
        elif not isinstance(self.actors, tuple):
            object.__setattr__(self, "actors", tuple(self.actors))
        if len(self.actors) != len(self.events):
            raise DataError(f"{self.repo_id}: {len(self.actors)} actors for {len(self.events)} events")
        previous = None
        for index, event in enumerate(self.events):
            if event.event_type == EventType.SOC and index != 0:
                raise DataError(f"{self.repo_id}: SOC at position {index}")
            if previous is not None and event.timestamp < previous:
                raise DataError(f"{self.repo_id}: timestamps decrease at position {index}")
            previous = event.timestamp

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def last_timestamp(self) -> Optional[int]:
        return self.events[-1].timestamp if self.events else None


@dataclass(frozen=True)
class TimeWindows:
    train_start: int
    train_end: int
    val_start: int
    val_end: int
    sim_start: int
    sim_end: int

    def __post_init__(self):
        ordered = (
            self.train_start < self.train_end <= self.val_start < self.val_end <= self.sim_start < self.sim_end
        )
        if not ordered:
            raise DataError(
                "Time windows must satisfy train_start < train_end <= val_start < val_end "
                f"<= sim_start < sim_end, got {self}"
            )

    @property
    def train(self) -> Tuple[int, int]:
        return self.train_start, self.train_end

    @property
    def validation(self) -> Tuple[int, int]:
        return self.val_start, self.val_end

    @property
    def simulation(self) -> Tuple[int, int]:
        return self.sim_start, self.sim_end

    @property
    def sim_hours(self) -> float:
        return delay_between(self.sim_start, self.sim_end)


def chain_slice(chain: EventChain, start: float = -math.inf, end: float = math.inf) -> EventChain:
    """Events with start <= timestamp < end, order preserved. SOC is not re-added."""
    if not start < end:
        raise DataError(f"Invalid window [{start}, {end})")
    kept = [(e, a) for e, a in zip(chain.events, chain.actors) if start <= e.timestamp < end]
    return EventChain(chain.repo_id, tuple(e for e, _ in kept), tuple(a for _, a in kept))
