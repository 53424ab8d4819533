import logging
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Mapping, Optional, Tuple

import numpy as np
import torch
from tqdm import tqdm

from repo_evolve.encoder import FeatureEncoder, target_positions
from repo_evolve.errors import NumericError
from repo_evolve.ingestion import decode_delay
from repo_evolve.models.config import SimConfig
from repo_evolve.models.events import (
    MONTH_HOURS,
    MONTH_SECONDS,
    NUM_EVENT_TYPES,
    SECONDS_PER_HOUR,
    Event,
    EventChain,
    EventType,
    TimeWindows,
    chain_slice,
)
from repo_evolve.network import MtsNetwork, predict

logger = logging.getLogger(__name__)

# default range for the random baseline when a repo has too little history
DEFAULT_DELAY_RANGE = (0.0, float(MONTH_HOURS))
RANDOM_BASELINE_TYPES: Tuple[EventType, ...] = tuple(
    EventType(i) for i in range(NUM_EVENT_TYPES) if EventType(i) != EventType.SOC
)
# 1e10 hours, far past any horizon
MAX_ENCODED_DELAY = 100.0
_BATCH = 1024


@dataclass(frozen=True)
class Prediction:
    event: Event
    type_score: float = 1.0
    group_score: float = 1.0


@dataclass
class SimulationResult:
    repo_id: str
    predictions: List[Prediction] = field(default_factory=list)
    truncated: bool = False

    @property
    def chain(self) -> EventChain:
        return EventChain(self.repo_id, tuple(p.event for p in self.predictions))

    def __len__(self) -> int:
        return len(self.predictions)


def repo_rng(seed: int, repo_id: str) -> np.random.Generator:
    """Per-repo stream so results do not depend on which repos share a batch."""
    return np.random.default_rng([seed, zlib.crc32(repo_id.encode("utf-8"))])


def history_before(chain: EventChain, windows: TimeWindows) -> EventChain:
    return chain_slice(chain, end=windows.sim_start)


def _advance(clock: int, delay_hours: float) -> int:
    return clock + int(round(delay_hours * SECONDS_PER_HOUR))


@dataclass
class _Rollout:
    repo_id: str
    window: Deque[np.ndarray]
    clock: int
    rng: np.random.Generator
    result: SimulationResult
    steps: int = 0
    done: bool = False


class EvolutionSimulator:
    """Closed-loop rollout and next-event prediction from true history with one trained network."""

    def __init__(
        self,
        model: MtsNetwork,
        encoder: FeatureEncoder,
        windows: TimeWindows,
        window_size: int = 20,
        config: SimConfig = SimConfig(),
        use_no_event_type: bool = True,
    ):
        self.model = model
        self.encoder = encoder
        self.windows = windows
        self.window_size = window_size
        self.config = config
        self.use_no_event_type = use_no_event_type
        self.artificial_group = encoder.group_model.artificial_group

        self.type_mask = np.ones(NUM_EVENT_TYPES, dtype=bool)
        self.type_mask[EventType.SOC] = False
        if not use_no_event_type:
            self.type_mask[EventType.NO_EVENT_FOR_ONE_MONTH] = False

    def _choose(self, probs: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> int:
        scores = np.where(mask, probs, 0.0)
        if self.config.decode == "sample" and scores.sum() > 0:
            return int(rng.choice(len(scores), p=scores / scores.sum()))
        return int(np.argmax(np.where(mask, probs, -np.inf)))

    def decode(
        self, type_probs: np.ndarray, delay: float, group_probs: np.ndarray, rng: np.random.Generator
    ) -> Tuple[EventType, int, float, float, float]:
        """(type, group, delay hours, type score, group score) from one output row."""
        event_type = EventType(self._choose(type_probs, self.type_mask, rng))
        if event_type == EventType.NO_EVENT_FOR_ONE_MONTH:
            group = self.artificial_group
        else:
            group_mask = np.ones(len(group_probs), dtype=bool)
            group_mask[self.artificial_group] = False
            group = self._choose(group_probs, group_mask, rng)
        delay_hours = decode_delay(min(max(0.0, float(delay)), MAX_ENCODED_DELAY))
        return event_type, group, delay_hours, float(type_probs[event_type]), float(group_probs[group])

    def _start(self, repo_id: str, history: EventChain) -> _Rollout:
        rows = self.encoder.padded_chain(history, self.window_size)[-self.window_size :]
        clock = history.last_timestamp
        if clock is None:
            clock = self.windows.sim_start
        rng = repo_rng(self.config.seed, repo_id)
        return _Rollout(repo_id, deque(rows, maxlen=self.window_size), clock, rng, SimulationResult(repo_id))

    def _step(self, rollouts: List[_Rollout]):
        inputs = torch.from_numpy(np.stack([np.stack(r.window) for r in rollouts])).float()
        output = predict(self.model, inputs)
        type_probs = output.type_probs.double().numpy()
        delays = output.delay.double().numpy().reshape(-1)
        group_probs = output.group_probs.double().numpy()
        if not (np.isfinite(type_probs).all() and np.isfinite(delays).all() and np.isfinite(group_probs).all()):
            raise NumericError("Non-finite prediction during rollout")
        sim_start, sim_end = self.windows.simulation
        for i, rollout in enumerate(rollouts):
            event_type, group, delay_hours, type_score, group_score = self.decode(
                type_probs[i], delays[i], group_probs[i], rollout.rng
            )
            timestamp = _advance(rollout.clock, delay_hours)
            if timestamp >= sim_end:
                rollout.done = True
                continue
            event = Event(event_type, group, timestamp, (timestamp - rollout.clock) / SECONDS_PER_HOUR)
            rollout.window.append(self.encoder.encode_event(event, rollout.repo_id))
            rollout.clock = timestamp
            rollout.steps += 1
            if timestamp >= sim_start:
                rollout.result.predictions.append(Prediction(event, type_score, group_score))
            if rollout.steps >= self.config.max_events_per_repo:
                rollout.result.truncated = True
                rollout.done = True
                logger.warning("%s: stopped after %d predicted events", rollout.repo_id, rollout.steps)

    def simulate_all(self, histories: Mapping[str, EventChain]) -> Dict[str, SimulationResult]:
        """
        Rolls every repo forward from its history (events before sim_start)
        until the next predicted timestamp reaches sim_end. Active repos are
        stepped together in batches.
        """
        rollouts = [self._start(repo_id, histories[repo_id]) for repo_id in sorted(histories)]
        active = list(rollouts)
        progress = tqdm(total=len(rollouts), desc="simulate", disable=None)
        while active:
            for start in range(0, len(active), _BATCH):
                self._step(active[start : start + _BATCH])
            finished = sum(r.done for r in active)
            progress.update(finished)
            active = [r for r in active if not r.done]
        progress.close()
        truncated = sum(r.result.truncated for r in rollouts)
        logger.info("Simulated %d repos, %d truncated", len(rollouts), truncated)
        return {r.repo_id: r.result for r in rollouts}

    def simulate_repo(self, repo_id: str, history: EventChain) -> SimulationResult:
        return self.simulate_all({repo_id: history})[repo_id]

    def predict_single_events(self, chain: EventChain) -> List[Prediction]:
        """
        One prediction per event of `chain` in the simulation window, each
        conditioned on the true previous events. The predicted timestamp is
        the true previous timestamp plus the predicted delay.
        """
        positions = target_positions(chain, self.windows.simulation)
        if not positions:
            return []
        padded = self.encoder.padded_chain(chain, self.window_size)
        rng = repo_rng(self.config.seed, chain.repo_id)
        predictions = []
        for start in range(0, len(positions), _BATCH):
            batch = positions[start : start + _BATCH]
            inputs = torch.from_numpy(np.stack([padded[p : p + self.window_size] for p in batch])).float()
            output = predict(self.model, inputs)
            type_probs = output.type_probs.double().numpy()
            delays = output.delay.double().numpy().reshape(-1)
            group_probs = output.group_probs.double().numpy()
            for i, position in enumerate(batch):
                event_type, group, delay_hours, type_score, group_score = self.decode(
                    type_probs[i], delays[i], group_probs[i], rng
                )
                previous = chain.events[position - 1].timestamp
                timestamp = _advance(previous, delay_hours)
                event = Event(event_type, group, timestamp, (timestamp - previous) / SECONDS_PER_HOUR)
                predictions.append(Prediction(event, type_score, group_score))
        return predictions

    def predict_all(self, chains: Mapping[str, EventChain]) -> Dict[str, SimulationResult]:
        results = {}
        skipped = 0
        for repo_id in tqdm(sorted(chains), desc="predict", disable=None):
            predictions = self.predict_single_events(chains[repo_id])
            if not predictions:
                skipped += 1
                continue
            results[repo_id] = SimulationResult(repo_id, predictions)
        if skipped:
            logger.info("Skipped %d repos without events in the simulation window", skipped)
        return results


def _repeat_until_horizon(
    repo_id: str,
    clock: int,
    windows: TimeWindows,
    next_event,
    max_events: int,
) -> SimulationResult:
    result = SimulationResult(repo_id)
    steps = 0
    while True:
        event_type, group, delay_hours = next_event()
        timestamp = _advance(clock, delay_hours)
        if timestamp >= windows.sim_end:
            break
        event = Event(event_type, group, timestamp, (timestamp - clock) / SECONDS_PER_HOUR)
        clock = timestamp
        steps += 1
        if timestamp >= windows.sim_start:
            result.predictions.append(Prediction(event))
        if steps >= max_events:
            result.truncated = True
            break
    return result


def baseline_random(
    repo_id: str,
    history: EventChain,
    windows: TimeWindows,
    total_groups: int,
    seed: int = 42,
    max_events: int = 100_000,
) -> SimulationResult:
    """
    Uniform event type (SOC excluded) and group; delay uniform between the
    smallest and largest delay seen in the repo's history.
    """
    rng = repo_rng(seed, repo_id)
    events = history.events
    # the first event after SOC has no inter-event delay
    delays = [e.delay_hours for i, e in enumerate(events) if i > 0 and events[i - 1].event_type != EventType.SOC]
    real = sum(e.event_type.is_concrete for e in events)
    low, high = (min(delays), max(delays)) if real >= 2 and delays else DEFAULT_DELAY_RANGE
    clock = history.last_timestamp if history.events else windows.sim_start

    def next_event():
        event_type = RANDOM_BASELINE_TYPES[int(rng.integers(len(RANDOM_BASELINE_TYPES)))]
        group = int(rng.integers(total_groups))
        return event_type, group, float(rng.uniform(low, high)) if high > low else low

    return _repeat_until_horizon(repo_id, clock, windows, next_event, max_events)


def baseline_previous(
    repo_id: str, history: EventChain, windows: TimeWindows, max_events: int = 100_000
) -> SimulationResult:
    """Repeats the last (type, group, delay) before the simulation window."""
    last: Optional[Event] = next((e for e in reversed(history.events) if e.event_type != EventType.SOC), None)
    if last is None:
        return SimulationResult(repo_id)
    return _repeat_until_horizon(
        repo_id,
        history.last_timestamp,
        windows,
        lambda: (last.event_type, last.user_group, last.delay_hours),
        max_events,
    )


def baseline_noevent(repo_id: str, windows: TimeWindows, artificial_group: Optional[int] = None) -> SimulationResult:
    """NoEventForOneMonth every 720h after sim_start, independent of history."""
    result = SimulationResult(repo_id)
    timestamp = windows.sim_start + MONTH_SECONDS
    while timestamp < windows.sim_end:
        result.predictions.append(
            Prediction(Event(EventType.NO_EVENT_FOR_ONE_MONTH, artificial_group, timestamp, float(MONTH_HOURS)))
        )
        timestamp += MONTH_SECONDS
    return result
