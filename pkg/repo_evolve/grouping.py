import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from sklearn.cluster import kmeans_plusplus
from sklearn.metrics import silhouette_score

from repo_evolve.errors import DataError
from repo_evolve.ingestion import encode_delay
from repo_evolve.models.events import NUM_EVENT_TYPES, EventChain, EventType
from repo_evolve.models.profiles import UserProfile

logger = logging.getLogger(__name__)

USER_FEATURE_DIM = 9
# per block: mean delay (1), delay variance (1), per-type counts (12)
ACTIVITY_BLOCK_DIM = 2 + NUM_EVENT_TYPES
ACTIVITY_DIM = 2 * ACTIVITY_BLOCK_DIM

_DISTANCE_CHUNK = 4096


def user_feature_vector(profile: Optional[UserProfile]) -> np.ndarray:
    """
    Profile features in fixed order: user type one-hot (2), country code,
    GitHub impact, followers, followees, repos created, forks and watches on
    created repos. Count-like entries go through the delay log map.
    """
    if profile is None:
        return np.zeros(USER_FEATURE_DIM)
    counts = encode_delay(
        np.array(
            [
                profile.follower_count,
                profile.followee_count,
                profile.repos_created_count,
                profile.forks_on_created_repos,
                profile.watches_on_created_repos,
            ],
            dtype=np.float64,
        )
    )
    head = np.array([*profile.user_type_onehot, float(profile.country_code), float(profile.github_impact)])
    return np.concatenate([head, counts])


@dataclass
class UserFeatureMatrix:
    user_ids: Tuple[str, ...]
    matrix: np.ndarray
    missing_profiles: int = 0


def window_actors(chains: Iterable[EventChain], window: Tuple[int, int]) -> List[str]:
    start, end = window
    actors = set()
    for chain in chains:
        for event, actor in zip(chain.events, chain.actors):
            if actor is not None and event.event_type.is_concrete and start <= event.timestamp < end:
                actors.add(actor)
    return sorted(actors)


def build_user_features(
    profiles: Mapping[str, UserProfile],
    chains: Iterable[EventChain],
    window: Tuple[int, int],
) -> UserFeatureMatrix:
    """One row per user active in the training window; users without a profile get a zero row."""
    user_ids = window_actors(chains, window)
    rows = []
    missing = 0
    for user_id in user_ids:
        profile = profiles.get(user_id)
        missing += profile is None
        rows.append(user_feature_vector(profile))
    if missing:
        logger.warning("%d of %d active users have no profile; using zero features", missing, len(user_ids))
    matrix = np.vstack(rows) if rows else np.zeros((0, USER_FEATURE_DIM))
    return UserFeatureMatrix(tuple(user_ids), matrix, missing)


def squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    out = np.empty((points.shape[0], centroids.shape[0]))
    for start in range(0, points.shape[0], _DISTANCE_CHUNK):
        block = points[start : start + _DISTANCE_CHUNK]
        out[start : start + _DISTANCE_CHUNK] = ((block[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
    return out


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    inertia_history: List[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.inertia_history)


def _update_centroids(points: np.ndarray, labels: np.ndarray, distances: np.ndarray, k: int) -> np.ndarray:
    sizes = np.bincount(labels, minlength=k)
    sums = np.zeros((k, points.shape[1]))
    np.add.at(sums, labels, points)
    centroids = sums / np.maximum(sizes, 1)[:, None]
    empty = np.flatnonzero(sizes == 0)
    if empty.size:
        # re-seed each empty cluster at the point farthest from its own centroid
        own = distances[np.arange(points.shape[0]), labels].copy()
        for cluster in empty:
            farthest = int(np.argmax(own))
            centroids[cluster] = points[farthest]
            own[farthest] = -1.0
        logger.warning("Re-seeded %d empty clusters", empty.size)
    return centroids


def kmeans(points: np.ndarray, k: int, seed: int = 42, max_iter: int = 300, tol: float = 1e-6) -> KMeansResult:
    """
    Lloyd iterations from k-means++ seeds. Stops when the assignment repeats,
    the relative inertia improvement drops below `tol`, or after `max_iter`
    assignment steps. The returned assignment is nearest-centroid for the
    returned centroids.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] < 1:
        raise DataError(f"Expected an n x d matrix with d >= 1, got shape {points.shape}")
    n = points.shape[0]
    if k < 1 or n < k:
        raise DataError(f"k-means needs 1 <= k <= n, got k={k}, n={n}")

    centroids, _ = kmeans_plusplus(points, n_clusters=k, random_state=seed)
    history: List[float] = []
    previous_labels = None
    for iteration in range(1, max_iter + 1):
        distances = squared_distances(points, centroids)
        labels = distances.argmin(axis=1)
        inertia = float(distances[np.arange(n), labels].sum())
        history.append(inertia)

        converged = inertia == 0.0 or (previous_labels is not None and np.array_equal(labels, previous_labels))
        if not converged and len(history) > 1 and history[-2] > 0:
            converged = (history[-2] - inertia) / history[-2] < tol
        if converged or iteration == max_iter:
            break
        centroids = _update_centroids(points, labels, distances, k)
        previous_labels = labels

    logger.debug("k-means k=%d finished after %d iterations, inertia %.6g", k, len(history), history[-1])
    return KMeansResult(centroids, labels, history[-1], history)


@dataclass
class ScanRow:
    k: int
    inertia: float
    silhouette: float


def scan_k(points: np.ndarray, ks: Sequence[int], seed: int = 42, max_iter: int = 300, tol: float = 1e-6) -> List[ScanRow]:
    """Inertia and silhouette per k, the table behind an elbow/silhouette choice of k."""
    rows = []
    n = len(points)
    for k in ks:
        result = kmeans(points, k, seed=seed, max_iter=max_iter, tol=tol)
        silhouette = float("nan")
        if 2 <= k < n and len(np.unique(result.assignment)) > 1:
            silhouette = float(
                silhouette_score(points, result.assignment, sample_size=min(n, 5000), random_state=seed)
            )
        rows.append(ScanRow(k, result.inertia, silhouette))
        logger.info("k=%d inertia=%.6g silhouette=%.4f", k, result.inertia, silhouette)
    return rows


@dataclass
class UserGroupModel:
    """k-means groups over standardized user features; group C is reserved for artificial events."""

    n_groups: int
    centroids: np.ndarray
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    assignment: Dict[str, int]
    seed: int = 42

    @property
    def artificial_group(self) -> int:
        return self.n_groups

    @property
    def total_groups(self) -> int:
        return self.n_groups + 1

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.feature_mean) / self.feature_scale

    def nearest_group(self, features: np.ndarray) -> int:
        z = self.standardize(np.atleast_2d(features))
        return int(squared_distances(z, self.centroids).argmin(axis=1)[0])

    def group_of(self, user_id: str, profile: Optional[UserProfile] = None) -> int:
        """Fitted group, or the nearest centroid for users unseen at training time."""
        group = self.assignment.get(user_id)
        if group is None:
            group = self.nearest_group(user_feature_vector(profile))
        return group


def fit_user_groups(
    features: UserFeatureMatrix,
    n_groups: int = 100,
    seed: int = 42,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> UserGroupModel:
    matrix = features.matrix
    mean = matrix.mean(axis=0)
    scale = matrix.std(axis=0)
    scale[scale == 0] = 1.0
    result = kmeans((matrix - mean) / scale, n_groups, seed=seed, max_iter=max_iter, tol=tol)
    assignment = {user_id: int(label) for user_id, label in zip(features.user_ids, result.assignment)}
    logger.info("Fitted %d user groups over %d users, inertia %.6g", n_groups, len(assignment), result.inertia)
    return UserGroupModel(n_groups, result.centroids, mean, scale, assignment, seed)


def assign_groups(
    chain: EventChain, model: UserGroupModel, profiles: Optional[Mapping[str, UserProfile]] = None
) -> EventChain:
    """Fills in user groups: real events from their actor, artificial events with group C."""
    profiles = profiles or {}
    events = []
    for event, actor in zip(chain.events, chain.actors):
        if event.event_type == EventType.NO_EVENT_FOR_ONE_MONTH:
            event = event.with_group(model.artificial_group)
        elif event.event_type.is_concrete and actor is not None:
            event = event.with_group(model.group_of(actor, profiles.get(actor)))
        events.append(event)
    return EventChain(chain.repo_id, tuple(events), chain.actors)


@dataclass
class ActivityStats:
    mean_delay: float = 0.0
    delay_variance: float = 0.0
    type_counts: np.ndarray = field(default_factory=lambda: np.zeros(NUM_EVENT_TYPES))

    def vector(self) -> np.ndarray:
        return np.concatenate([[self.mean_delay, self.delay_variance], self.type_counts])


class _Accumulator:
    def __init__(self):
        self.delays: List[float] = []
        self.counts = np.zeros(NUM_EVENT_TYPES)

    def stats(self) -> ActivityStats:
        delays = np.asarray(self.delays)
        mean = float(delays.mean()) if delays.size else 0.0
        variance = float(delays.var()) if delays.size >= 2 else 0.0
        return ActivityStats(mean, variance, self.counts.copy())


@dataclass
class GroupActivityTable:
    """Raw (pre-normalization) activity per group, globally and per (group, repo)."""

    global_stats: Dict[int, ActivityStats]
    repo_stats: Dict[Tuple[int, str], ActivityStats]

    def vector(self, group: int, repo_id: str) -> np.ndarray:
        """28-d log-normalized activity: global block then (group, repo) block."""
        empty = ActivityStats()
        raw = np.concatenate(
            [
                self.global_stats.get(group, empty).vector(),
                self.repo_stats.get((group, repo_id), empty).vector(),
            ]
        )
        return encode_delay(raw)


def compute_group_activity(
    chains: Iterable[EventChain], assignment: Mapping[str, int], window: Tuple[int, int]
) -> GroupActivityTable:
    """
    Per group: mean and population variance of the delays of its members'
    events (events directly after SOC have no inter-event delay), and event
    counts per type; globally and restricted to each repo.
    """
    start, end = window
    global_acc: Dict[int, _Accumulator] = defaultdict(_Accumulator)
    repo_acc: Dict[Tuple[int, str], _Accumulator] = defaultdict(_Accumulator)
    unassigned = 0
    for chain in chains:
        for index, (event, actor) in enumerate(zip(chain.events, chain.actors)):
            if actor is None or not event.event_type.is_concrete or not start <= event.timestamp < end:
                continue
            group = assignment.get(actor)
            if group is None:
                unassigned += 1
                continue
            accumulators = (global_acc[group], repo_acc[(group, chain.repo_id)])
            has_delay = index > 0 and chain.events[index - 1].event_type != EventType.SOC
            for acc in accumulators:
                acc.counts[event.event_type] += 1
                if has_delay:
                    acc.delays.append(event.delay_hours)
    if unassigned:
        logger.warning("%d training events by users without a group were left out of activity features", unassigned)
    return GroupActivityTable(
        {group: acc.stats() for group, acc in global_acc.items()},
        {key: acc.stats() for key, acc in repo_acc.items()},
    )
