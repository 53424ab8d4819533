import numpy as np
import pytest

from repo_evolve.errors import DataError
from repo_evolve.grouping import (
    ACTIVITY_DIM,
    USER_FEATURE_DIM,
    UserFeatureMatrix,
    assign_groups,
    build_user_features,
    compute_group_activity,
    fit_user_groups,
    kmeans,
    scan_k,
    squared_distances,
    user_feature_vector,
)
from repo_evolve.ingestion import encode_delay, inject_no_event
from repo_evolve.models.config import SynthConfig
from repo_evolve.models.events import EventType, TimeWindows
from repo_evolve.synth import generate
from tests.conftest import T0, group_model, hours, make_chain


def test_kmeans_inertia_never_increases():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        points = np.vstack([rng.normal(c, 1.0, size=(20, 3)) for c in (0.0, 4.0, 8.0)])
        result = kmeans(points, 4, seed=seed)
        history = np.array(result.inertia_history)
        assert np.all(np.diff(history) <= 1e-9 * history[0])


def test_kmeans_assignment_is_nearest_centroid():
    points = np.random.default_rng(3).normal(size=(200, 2))
    result = kmeans(points, 5, seed=3)
    assert np.array_equal(result.assignment, squared_distances(points, result.centroids).argmin(axis=1))
    assert result.inertia == pytest.approx(squared_distances(points, result.centroids).min(axis=1).sum())


def test_kmeans_rejects_bad_k():
    with pytest.raises(DataError):
        kmeans(np.zeros((3, 2)), 4)
    with pytest.raises(DataError):
        kmeans(np.zeros((3, 2)), 0)


def test_kmeans_recovers_planted_populations():
    windows = TimeWindows(T0, hours(60), hours(60), hours(72), hours(72), hours(96))
    dataset = generate(SynthConfig(n_repos=10, n_users=40, history_hours=48.0), windows)
    users = [u for u in dataset.users if u.user_id.startswith("u")]
    features = UserFeatureMatrix(tuple(u.user_id for u in users), np.vstack([user_feature_vector(u) for u in users]))
    model = fit_user_groups(features, n_groups=2, seed=0)
    truth = np.array([dataset.populations[u] for u in features.user_ids])
    labels = np.array([model.assignment[u] for u in features.user_ids])
    assert np.array_equal(labels, truth) or np.array_equal(labels, 1 - truth)


def test_user_feature_vector_without_profile_is_zero():
    assert not user_feature_vector(None).any()
    assert user_feature_vector(None).shape == (USER_FEATURE_DIM,)


def test_build_user_features_uses_training_window_actors():
    chain = make_chain("r", [("Push", "a", 1), ("Push", "b", 2), ("Push", "late", 300)])
    features = build_user_features({}, [chain], (hours(0), hours(200)))
    assert features.user_ids == ("a", "b")
    assert features.missing_profiles == 2


def test_scan_k_rows():
    points = np.random.default_rng(0).normal(size=(60, 2))
    rows = scan_k(points, [1, 2, 3], seed=0)
    assert [r.k for r in rows] == [1, 2, 3]
    assert np.isnan(rows[0].silhouette)
    assert -1.0 <= rows[1].silhouette <= 1.0
    assert rows[2].inertia <= rows[0].inertia


def test_assign_groups_uses_artificial_group_for_no_event():
    chain = inject_no_event(make_chain("r", [("Push", "a", 0), ("Watch", "b", 800)]))
    model = group_model(2, {"a": 0, "b": 1})
    grouped = assign_groups(chain, model)
    assert [e.user_group for e in grouped] == [None, 0, 2, 1]


def test_unseen_user_gets_nearest_group():
    model = group_model(2, {"a": 1})
    # centroids are rows 0..8 and 9..17; a zero vector is closest to row 0
    assert model.group_of("stranger") == 0
    assert model.group_of("a") == 1


def test_group_activity_statistics():
    chain = make_chain("r", [("Push", "a", 0), ("Push", "a", 2), ("Watch", "a", 6), ("Watch", "b", 7)])
    other = make_chain("s", [("Fork", "a", 1)])
    table = compute_group_activity([chain, other], {"a": 0, "b": 1}, (hours(0), hours(200)))

    group_a = table.global_stats[0]
    # the event right after SOC has no delay
    assert group_a.mean_delay == pytest.approx(3.0)
    assert group_a.delay_variance == pytest.approx(1.0)
    assert group_a.type_counts[EventType.PUSH] == 2
    assert group_a.type_counts[EventType.FORK] == 1
    assert table.repo_stats[(0, "r")].type_counts[EventType.FORK] == 0

    vector = table.vector(0, "r")
    assert vector.shape == (ACTIVITY_DIM,)
    assert vector[0] == pytest.approx(encode_delay(3.0))
    assert not table.vector(0, "unknown")[14:].any()
