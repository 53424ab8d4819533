from collections import Counter

import numpy as np
import pytest
import torch
from torch import nn

from repo_evolve.encoder import FeatureEncoder
from repo_evolve.errors import NumericError
from repo_evolve.grouping import GroupActivityTable, assign_groups
from repo_evolve.ingestion import encode_delay
from repo_evolve.models.config import FeatureFlags, RepoEmbeddingMode, SimConfig
from repo_evolve.models.events import Event, EventChain, EventType, TimeWindows
from repo_evolve.network import MtsOutput, tiny_model
from repo_evolve.simulator import (
    RANDOM_BASELINE_TYPES,
    EvolutionSimulator,
    baseline_noevent,
    baseline_previous,
    baseline_random,
    history_before,
)
from tests.conftest import HOUR, T0, group_model, hours, make_chain

GROUPS = group_model(2, {"a": 0, "b": 1})


class FixedOutputModel(nn.Module):
    """Returns the same prediction for every row and remembers its inputs."""

    def __init__(self, type_probs, delay_hours, group_probs=(0.2, 0.7, 0.1)):
        super().__init__()
        self.anchor = nn.Parameter(torch.zeros(1))
        self.type_probs = torch.tensor(type_probs, dtype=torch.float32)
        self.delay = float(encode_delay(delay_hours))
        self.group_probs = torch.tensor(group_probs, dtype=torch.float32)
        self.seen = []

    def forward(self, x):
        self.seen.append(x.clone())
        n = x.shape[0]
        return MtsOutput(
            self.type_probs.expand(n, -1),
            torch.full((n, 1), self.delay),
            self.group_probs.expand(n, -1),
        )


def _type_probs(**overrides):
    probs = np.full(12, 0.01)
    for name, value in overrides.items():
        probs[EventType[name]] = value
    return probs.tolist()


def _encoder():
    return FeatureEncoder(
        GROUPS, GroupActivityTable({}, {}), FeatureFlags(use_repo_embedding=RepoEmbeddingMode.NONE)
    )


def _history(repo_id="r", points=((("Push", "a", 230), ("Watch", "b", 235)))):
    return assign_groups(make_chain(repo_id, points), GROUPS)


def _simulator(model, windows, **kwargs):
    return EvolutionSimulator(model, _encoder(), windows, window_size=4, **kwargs)


def test_rollout_stays_inside_window(windows):
    model = FixedOutputModel(_type_probs(PUSH=0.9), 10.0)
    result = _simulator(model, windows).simulate_repo("r", _history())
    timestamps = [p.event.timestamp for p in result.predictions]
    assert timestamps == [hours(h) for h in (245, 255, 265, 275, 285)]
    assert all(p.event.delay_hours == pytest.approx(10.0) for p in result.predictions)
    assert not result.truncated


def test_rollout_starts_from_history_window(windows):
    model = FixedOutputModel(_type_probs(PUSH=0.9), 10.0)
    encoder = _encoder()
    history = _history()
    EvolutionSimulator(model, encoder, windows, window_size=4).simulate_repo("r", history)
    expected = encoder.padded_chain(history, 4)[-4:]
    assert np.allclose(model.seen[0][0].numpy(), expected)


def test_long_delays_leave_window_empty():
    windows = TimeWindows(T0, hours(200), hours(200), hours(220), hours(240), hours(600))
    model = FixedOutputModel(_type_probs(NO_EVENT_FOR_ONE_MONTH=0.9), 720.0)
    result = _simulator(model, windows).simulate_repo("r", _history(points=(("Push", "a", 239),)))
    assert len(result) == 0


def test_zero_delay_hits_event_cap(windows):
    model = FixedOutputModel(_type_probs(PUSH=0.9), 0.0)
    result = _simulator(model, windows, config=SimConfig(max_events_per_repo=25)).simulate_repo("r", _history())
    assert result.truncated


def test_soc_is_never_predicted(windows):
    model = FixedOutputModel(_type_probs(SOC=0.99, FORK=0.5), 10.0)
    result = _simulator(model, windows).simulate_repo("r", _history())
    assert {p.event.event_type for p in result.predictions} == {EventType.FORK}
    assert result.predictions[0].type_score == pytest.approx(0.5)


def test_no_event_type_can_be_masked(windows):
    model = FixedOutputModel(_type_probs(NO_EVENT_FOR_ONE_MONTH=0.99, WATCH=0.5), 10.0)
    masked = _simulator(model, windows, use_no_event_type=False).simulate_repo("r", _history())
    assert {p.event.event_type for p in masked.predictions} == {EventType.WATCH}

    unmasked = _simulator(model, windows).simulate_repo("r", _history())
    assert {p.event.event_type for p in unmasked.predictions} == {EventType.NO_EVENT_FOR_ONE_MONTH}
    assert {p.event.user_group for p in unmasked.predictions} == {GROUPS.artificial_group}


def test_concrete_events_never_get_artificial_group(windows):
    model = FixedOutputModel(_type_probs(PUSH=0.9), 10.0, group_probs=(0.1, 0.3, 0.95))
    result = _simulator(model, windows).simulate_repo("r", _history())
    assert {p.event.user_group for p in result.predictions} == {1}


def test_sampled_rollouts_are_reproducible_and_batch_independent(windows):
    model = FixedOutputModel(_type_probs(PUSH=0.4, WATCH=0.4, FORK=0.2), 2.0)
    config = SimConfig(decode="sample", seed=11)
    histories = {"r": _history("r"), "s": _history("s")}
    together = _simulator(model, windows, config=config).simulate_all(histories)
    again = _simulator(model, windows, config=config).simulate_all(histories)
    alone = _simulator(model, windows, config=config).simulate_repo("r", histories["r"])
    assert together["r"].predictions == again["r"].predictions == alone.predictions
    assert len({p.event.event_type for p in alone.predictions}) > 1


def test_shifting_time_shifts_predictions(windows):
    model = FixedOutputModel(_type_probs(PUSH=0.4, WATCH=0.4), 3.0)
    config = SimConfig(decode="sample")
    shift = 1000 * HOUR
    shifted_windows = TimeWindows(*(t + shift for t in (
        windows.train_start, windows.train_end, windows.val_start, windows.val_end, windows.sim_start, windows.sim_end
    )))
    history = _history()
    moved = EventChain(
        history.repo_id,
        tuple(Event(e.event_type, e.user_group, e.timestamp + shift, e.delay_hours) for e in history.events),
        history.actors,
    )
    base = _simulator(model, windows, config=config).simulate_repo("r", history)
    later = _simulator(model, shifted_windows, config=config).simulate_repo("r", moved)
    assert [p.event.timestamp + shift for p in base.predictions] == [p.event.timestamp for p in later.predictions]
    assert [p.event.event_type for p in base.predictions] == [p.event.event_type for p in later.predictions]


def test_non_finite_predictions_are_errors(windows):
    model = FixedOutputModel(_type_probs(PUSH=float("nan")), 1.0)
    with pytest.raises(NumericError):
        _simulator(model, windows).simulate_repo("r", _history())


def test_single_event_prediction_uses_true_previous_timestamp(windows):
    chain = _history(points=(("Push", "a", 230), ("Watch", "b", 241), ("Push", "a", 250), ("Fork", "b", 270)))
    model = FixedOutputModel(_type_probs(PUSH=0.9), 4.0)
    predictions = _simulator(model, windows).predict_single_events(chain)
    assert [p.event.timestamp for p in predictions] == [hours(234), hours(245), hours(254)]
    assert _simulator(model, windows).predict_all({"r": chain, "quiet": _history("quiet")}).keys() == {"r"}


def test_single_event_prediction_is_causal(windows):
    encoder = _encoder()
    model = tiny_model(encoder.input_dim, GROUPS.total_groups, seed=1)
    simulator = EvolutionSimulator(model, encoder, windows, window_size=4)
    common = (("Push", "a", 230), ("Watch", "b", 241))
    first = simulator.predict_single_events(_history(points=common + (("Push", "a", 250), ("Fork", "b", 270))))
    second = simulator.predict_single_events(_history(points=common + (("Delete", "a", 245), ("Fork", "b", 270))))
    # a change at position 3 only reaches predictions from position 4 on
    assert first[:2] == second[:2]
    assert first[2] != second[2]


def test_history_is_cut_at_simulation_start(windows):
    chain = _history(points=(("Push", "a", 230), ("Watch", "b", 241)))
    assert history_before(chain, windows).events[-1].timestamp == hours(230)


def test_previous_event_baseline_repeats_last_event(windows):
    history = _history(points=(("Push", "a", 238), ("Watch", "b", 239)))
    result = baseline_previous("r", history, windows)
    assert len(result) == 48
    assert {(p.event.event_type, p.event.user_group) for p in result.predictions} == {(EventType.WATCH, 1)}
    assert baseline_previous("r", EventChain("r"), windows).predictions == []


def test_no_event_baseline_fires_every_month():
    short = TimeWindows(T0, hours(10), hours(10), hours(20), hours(20), hours(380))
    assert len(baseline_noevent("r", short)) == 0
    long = TimeWindows(T0, hours(10), hours(10), hours(20), hours(20), hours(20 + 1441))
    result = baseline_noevent("r", long, artificial_group=2)
    assert [p.event.timestamp for p in result.predictions] == [hours(740), hours(1460)]
    assert {p.event.user_group for p in result.predictions} == {2}


def test_random_baseline(windows):
    history = _history(points=(("Push", "a", 225), ("Push", "a", 230), ("Watch", "b", 235)))
    a = baseline_random("r", history, windows, total_groups=3, seed=5)
    b = baseline_random("r", history, windows, total_groups=3, seed=5)
    assert a.predictions == b.predictions
    assert all(p.event.delay_hours == pytest.approx(5.0) for p in a.predictions)
    assert len(a) == 10

    sparse = baseline_random("r", _history(points=(("Push", "a", 230),)), windows, total_groups=3)
    assert all(0.0 <= p.event.delay_hours <= 720.0 for p in sparse.predictions)


def test_random_baseline_type_frequencies():
    windows = TimeWindows(T0, hours(10), hours(10), hours(20), hours(20), hours(20 + 11_000))
    history = assign_groups(make_chain("r", [("Push", "a", 0), ("Push", "a", 1), ("Push", "a", 2)]), GROUPS)
    result = baseline_random("r", history, windows, total_groups=3)
    counts = Counter(p.event.event_type for p in result.predictions)
    assert EventType.SOC not in counts
    assert set(counts) == set(RANDOM_BASELINE_TYPES)
    for count in counts.values():
        assert count / len(result) == pytest.approx(1 / 11, abs=0.015)
