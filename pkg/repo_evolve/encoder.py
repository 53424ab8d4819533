import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import Dataset

from repo_evolve.errors import DataError
from repo_evolve.graph_builder import RepoEmbeddingModel
from repo_evolve.grouping import ACTIVITY_DIM, GroupActivityTable, UserGroupModel
from repo_evolve.ingestion import encode_delay
from repo_evolve.models.config import FeatureFlags, RepoEmbeddingMode
from repo_evolve.models.events import NUM_EVENT_TYPES, Event, EventChain, EventType
from repo_evolve.models.profiles import REPO_ATTRIBUTE_DIM, RepoProfile

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Block:
    name: str
    start: int
    size: int

    @property
    def stop(self) -> int:
        return self.start + self.size

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)


class FeatureEncoder:
    """
    Per-event input rows: onehot(type) | encoded delay | onehot(group) |
    activity(group) | repo block. With 100 groups and 256-d learned repo
    embeddings this is 12 + 1 + 101 + 28 + 256 = 398 wide.
    """

    def __init__(
        self,
        group_model: UserGroupModel,
        activity: Optional[GroupActivityTable] = None,
        flags: FeatureFlags = FeatureFlags(),
        embeddings: Optional[RepoEmbeddingModel] = None,
        repo_profiles: Optional[Mapping[str, RepoProfile]] = None,
        repo_index: Optional[Mapping[str, int]] = None,
    ):
        self.group_model = group_model
        self.activity = activity
        self.flags = flags
        self.embeddings = embeddings
        self.repo_profiles = repo_profiles or {}
        self.repo_index = repo_index or {}
        if flags.use_group_activity and activity is None:
            raise DataError("Group activity features are enabled but no activity table was given")
        mode = flags.use_repo_embedding
        if mode == RepoEmbeddingMode.LEARNED and embeddings is None:
            raise DataError("Learned repo embeddings are enabled but no embedding model was given")

        sizes = [
            ("type", NUM_EVENT_TYPES),
            ("delay", 1),
            ("group", group_model.total_groups),
            ("activity", ACTIVITY_DIM if flags.use_group_activity else 0),
            ("repo", self._repo_block_size()),
        ]
        self.blocks: Dict[str, Block] = {}
        offset = 0
        for name, size in sizes:
            self.blocks[name] = Block(name, offset, size)
            offset += size
        self.input_dim = offset
        self._repo_cache: Dict[str, np.ndarray] = {}

    def _repo_block_size(self) -> int:
        mode = self.flags.use_repo_embedding
        if mode == RepoEmbeddingMode.LEARNED:
            return self.embeddings.dim
        if mode == RepoEmbeddingMode.PROFILE:
            return REPO_ATTRIBUTE_DIM
        if mode == RepoEmbeddingMode.INDEX:
            return 1
        return 0

    def repo_block(self, repo_id: str) -> np.ndarray:
        cached = self._repo_cache.get(repo_id)
        if cached is not None:
            return cached
        mode = self.flags.use_repo_embedding
        size = self.blocks["repo"].size
        vector = None
        if mode == RepoEmbeddingMode.LEARNED:
            vector = self.embeddings.vector(repo_id)
        elif mode == RepoEmbeddingMode.PROFILE:
            profile = self.repo_profiles.get(repo_id)
            vector = None if profile is None else profile.attributes
        elif mode == RepoEmbeddingMode.INDEX:
            index = self.repo_index.get(repo_id)
            vector = None if index is None else np.array([encode_delay(float(index))])
        else:
            vector = np.zeros(0)
        if vector is None:
            logger.warning("Unknown repo %s for %s repo features; using zeros", repo_id, mode.value)
            vector = np.zeros(size)
        self._repo_cache[repo_id] = vector
        return vector

    def encode_event(self, event: Event, repo_id: str) -> np.ndarray:
        if not event.event_type.is_model_class:
            raise DataError(f"{event.event_type.label} is not a model event type")
        row = np.zeros(self.input_dim)
        row[self.blocks["type"].start + event.event_type] = 1.0
        row[self.blocks["delay"].start] = encode_delay(event.delay_hours)

        group = event.user_group
        if event.event_type != EventType.SOC:
            if group is None or not 0 <= group < self.group_model.total_groups:
                raise DataError(f"{repo_id}: group {group!r} outside [0, {self.group_model.total_groups})")
            if self.flags.use_user_group:
                row[self.blocks["group"].start + group] = 1.0
            if self.flags.use_group_activity and group != self.group_model.artificial_group:
                row[self.blocks["activity"].slice] = self.activity.vector(group, repo_id)
        row[self.blocks["repo"].slice] = self.repo_block(repo_id)
        return row

    def soc_row(self, repo_id: str) -> np.ndarray:
        return self.encode_event(Event(EventType.SOC, None, 0, 0.0), repo_id)

    def encode_chain(self, chain: EventChain) -> np.ndarray:
        if not chain.events:
            return np.zeros((0, self.input_dim))
        return np.vstack([self.encode_event(event, chain.repo_id) for event in chain.events])

    def padded_chain(self, chain: EventChain, window_size: int) -> np.ndarray:
        """Encoded chain preceded by `window_size` SOC rows."""
        pad = np.tile(self.soc_row(chain.repo_id), (window_size, 1))
        return np.vstack([pad, self.encode_chain(chain)])

    def describe(self) -> str:
        return " | ".join(f"{b.name}[{b.start},{b.stop})" for b in self.blocks.values())


@dataclass
class WindowedSample:
    inputs: np.ndarray
    target_type: int
    target_delay: float
    target_group: int

    def target_vectors(self, total_groups: int) -> Tuple[np.ndarray, float, np.ndarray]:
        type_onehot = np.zeros(NUM_EVENT_TYPES)
        type_onehot[self.target_type] = 1.0
        group_onehot = np.zeros(total_groups)
        group_onehot[self.target_group] = 1.0
        return type_onehot, self.target_delay, group_onehot


def target_positions(chain: EventChain, window: Tuple[float, float]) -> List[int]:
    start, end = window
    return [i for i in range(1, len(chain.events)) if start <= chain.events[i].timestamp < end]


def _target(event: Event, repo_id: str) -> Tuple[int, float, int]:
    if event.user_group is None:
        raise DataError(f"{repo_id}: target event at {event.timestamp} has no user group")
    return int(event.event_type), encode_delay(event.delay_hours), event.user_group


def make_windows(
    chain: EventChain, encoder: FeatureEncoder, window_size: int, window: Tuple[float, float]
) -> List[WindowedSample]:
    """
    One sample per event inside `window` that has a predecessor; inputs are
    the previous `window_size` encoded events, left-padded with SOC rows.
    """
    if window_size < 1:
        raise DataError(f"Window size must be >= 1, got {window_size}")
    positions = target_positions(chain, window)
    if not positions:
        return []
    padded = encoder.padded_chain(chain, window_size)
    samples = []
    for position in positions:
        target_type, target_delay, target_group = _target(chain.events[position], chain.repo_id)
        samples.append(
            WindowedSample(padded[position : position + window_size].copy(), target_type, target_delay, target_group)
        )
    return samples


class SequenceDataset(Dataset):
    """
    Windowed samples over many chains without materializing every window:
    each chain is encoded once and windows are sliced on access.
    """

    def __init__(
        self,
        chains: Iterable[EventChain],
        encoder: FeatureEncoder,
        window_size: int,
        window: Tuple[float, float],
    ):
        self.window_size = window_size
        self.input_dim = encoder.input_dim
        self.total_groups = encoder.group_model.total_groups
        self.matrices: List[torch.Tensor] = []
        self.index: List[Tuple[int, int]] = []
        targets: List[Tuple[int, float, int]] = []
        for chain in chains:
            positions = target_positions(chain, window)
            if not positions:
                continue
            chain_index = len(self.matrices)
            self.matrices.append(torch.from_numpy(encoder.padded_chain(chain, window_size)).float())
            for position in positions:
                self.index.append((chain_index, position))
                targets.append(_target(chain.events[position], chain.repo_id))
        self.target_types = torch.tensor([t[0] for t in targets], dtype=torch.int64)
        self.target_delays = torch.tensor([t[1] for t in targets], dtype=torch.float32)
        self.target_groups = torch.tensor([t[2] for t in targets], dtype=torch.int64)

    def __len__(self) -> int:
        return len(self.index)

    def __getitem__(self, item: int):
        chain_index, position = self.index[item]
        inputs = self.matrices[chain_index][position : position + self.window_size]
        return inputs, self.target_types[item], self.target_delays[item], self.target_groups[item]


def stack_windows(samples: Sequence[WindowedSample]) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.inputs for s in samples])).float()
