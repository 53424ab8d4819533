import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Literal, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from repo_evolve.errors import DataError
from repo_evolve.models.events import CONCRETE_EVENT_TYPES, Event, EventChain, EventType, TimeWindows, chain_slice
from repo_evolve.simulator import Prediction

logger = logging.getLogger(__name__)

BLEU_ORDERS = (1, 2, 3, 4)
PLACEHOLDER_GROUP = -1
TASKS = ("event_type", "user_group")
_COUNTED_TYPES = CONCRETE_EVENT_TYPES + (EventType.NO_EVENT_FOR_ONE_MONTH,)


def placeholder(timestamp: int = 0) -> Prediction:
    return Prediction(Event(EventType.NO_EVENT_IN_SIM_PERIOD, None, timestamp, 0.0), 1.0, 1.0)


@dataclass
class EvalPair:
    repo_id: str
    predicted: List[Prediction]
    truth: List[Prediction]

    def tokens(self, task: str, side: str) -> List[Hashable]:
        events = self.predicted if side == "predicted" else self.truth
        if task == "event_type":
            return [int(p.event.event_type) for p in events]
        if task == "user_group":
            return [PLACEHOLDER_GROUP if p.event.user_group is None else p.event.user_group for p in events]
        raise DataError(f"Unknown task {task!r}")

    def scores(self, task: str) -> List[float]:
        return [p.type_score if task == "event_type" else p.group_score for p in self.predicted]

    def delays(self, side: str) -> List[float]:
        events = self.predicted if side == "predicted" else self.truth
        return [p.event.delay_hours for p in events]


def _scored(events: Sequence) -> List[Prediction]:
    out = []
    for item in events:
        prediction = item if isinstance(item, Prediction) else Prediction(item)
        if prediction.event.event_type != EventType.SOC:
            out.append(prediction)
    return out


def make_pair(repo_id: str, predicted: Sequence, truth: Sequence) -> EvalPair:
    """SOC never takes part in scoring."""
    return EvalPair(repo_id, _scored(predicted), _scored(truth))


def apply_noevent_convention(pair: EvalPair) -> EvalPair:
    """An empty side becomes a single NoEventInSimPeriod event."""
    return EvalPair(
        pair.repo_id,
        list(pair.predicted) or [placeholder()],
        list(pair.truth) or [placeholder()],
    )


def ngram_counts(tokens: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_k(candidate: Sequence[Hashable], reference: Sequence[Hashable], k: int) -> float:
    """
    Geometric mean of clipped n-gram precisions for n = 1..k times the
    brevity penalty min(1, exp(1 - r/c)). No smoothing: any zero precision
    gives 0.
    """
    if k < 1:
        raise DataError(f"BLEU order must be >= 1, got {k}")
    if len(candidate) < k or len(reference) < k:
        raise DataError(f"BLEU-{k} needs at least {k} tokens on both sides")
    log_sum = 0.0
    for n in range(1, k + 1):
        candidate_ngrams = ngram_counts(candidate, n)
        clipped = candidate_ngrams & ngram_counts(reference, n)
        precision = sum(clipped.values()) / sum(candidate_ngrams.values())
        if precision == 0:
            return 0.0
        log_sum += math.log(precision) / k
    brevity_penalty = min(1.0, math.exp(1.0 - len(reference) / len(candidate)))
    return brevity_penalty * math.exp(log_sum)


def dtw(predicted: Sequence[float], truth: Sequence[float]) -> float:
    """Minimum cumulative |a - b| over monotone alignments; an empty side counts as [0]."""
    a = np.asarray(predicted if len(predicted) else [0.0], dtype=np.float64)
    b = np.asarray(truth if len(truth) else [0.0], dtype=np.float64)
    cost = np.abs(a[:, None] - b[None, :])
    r, c = cost.shape
    D = np.full((r + 1, c + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(r):
        for j in range(c):
            D[i + 1, j + 1] = cost[i, j] + min(D[i, j], D[i, j + 1], D[i + 1, j])
    return float(D[r, c])


def _precision_at_hits(hits: Sequence[bool]) -> float:
    found = 0
    total = 0.0
    for rank, hit in enumerate(hits, start=1):
        if hit:
            found += 1
            total += found / rank
    return total / found if found else 0.0


def average_precision(
    predicted: Sequence[Hashable],
    truth: Sequence[Hashable],
    scores: Sequence[float],
    mode: Literal["positional", "multiset"] = "positional",
) -> float:
    """
    positional: positions up to the shorter length are hits when the classes
    agree; positions are ranked by predicted-class confidence (ties keep
    position order). multiset: every prediction, ranked the same way, is a
    hit while its class still has unmatched occurrences in the truth.
    """
    if mode == "positional":
        length = min(len(predicted), len(truth))
        order = sorted(range(length), key=lambda i: -scores[i])
        return _precision_at_hits([predicted[i] == truth[i] for i in order])
    if mode == "multiset":
        remaining = Counter(truth)
        hits = []
        for i in sorted(range(len(predicted)), key=lambda i: -scores[i]):
            hit = remaining[predicted[i]] > 0
            if hit:
                remaining[predicted[i]] -= 1
            hits.append(hit)
        return _precision_at_hits(hits)
    raise DataError(f"Unknown mAP mode {mode!r}")


def mean_ap(pairs: Sequence[EvalPair], task: str, mode: str = "positional") -> float:
    if not pairs:
        return float("nan")
    pairs = [apply_noevent_convention(p) for p in pairs]
    return float(
        np.mean(
            [
                average_precision(p.tokens(task, "predicted"), p.tokens(task, "truth"), p.scores(task), mode)
                for p in pairs
            ]
        )
    )


def mae_counts(pairs: Sequence[EvalPair]) -> float:
    if not pairs:
        return float("nan")
    pairs = [apply_noevent_convention(p) for p in pairs]
    return float(np.mean([abs(len(p.predicted) - len(p.truth)) for p in pairs]))


@dataclass
class MetricReport:
    rows: pd.DataFrame
    summary: Dict = field(default_factory=dict)

    def value(self, *keys: str):
        node = self.summary
        for key in keys:
            node = node[key]
        return node


def _type_counts(events: Sequence[Prediction], prefix: str) -> Dict[str, int]:
    counts = Counter(p.event.event_type for p in events)
    return {f"{prefix}_{t.label}": counts.get(t, 0) for t in _COUNTED_TYPES}


def _mean_or_nan(values: pd.Series) -> float:
    values = values.dropna()
    return float(values.mean()) if len(values) else float("nan")


def evaluate(
    pairs: Sequence[EvalPair],
    map_mode: str = "positional",
    dtw_scale: float = 1.0,
) -> MetricReport:
    """
    Scores each repo after the NoEventInSimPeriod convention. BLEU-k is
    averaged over repos with at least k tokens on both sides; repos scoring
    0 stay in the mean.
    """
    records = []
    for raw in sorted(pairs, key=lambda p: p.repo_id):
        pair = apply_noevent_convention(raw)
        row = {
            "repo_id": pair.repo_id,
            "truth_events": len(raw.truth),
            "predicted_events": len(raw.predicted),
            "count_error": abs(len(pair.predicted) - len(pair.truth)),
            "dtw": dtw(pair.delays("predicted"), pair.delays("truth")) / dtw_scale,
        }
        for task in TASKS:
            candidate = pair.tokens(task, "predicted")
            reference = pair.tokens(task, "truth")
            row[f"{task}_ap"] = average_precision(candidate, reference, pair.scores(task), map_mode)
            for k in BLEU_ORDERS:
                eligible = len(candidate) >= k and len(reference) >= k
                row[f"{task}_bleu{k}"] = bleu_k(candidate, reference, k) if eligible else float("nan")
        row.update(_type_counts(raw.truth, "truth"))
        row.update(_type_counts(raw.predicted, "predicted"))
        records.append(row)

    rows = pd.DataFrame.from_records(records)
    summary: Dict = {"repos": len(rows), "map_mode": map_mode}
    if rows.empty:
        logger.warning("No repos to evaluate")
        return MetricReport(rows, summary)
    for task in TASKS:
        summary[task] = {
            "map": float(rows[f"{task}_ap"].mean()),
            "bleu": {
                str(k): {
                    "mean": _mean_or_nan(rows[f"{task}_bleu{k}"]),
                    "eligible": int(rows[f"{task}_bleu{k}"].notna().sum()),
                }
                for k in BLEU_ORDERS
            },
        }
    summary["time_delay"] = {"dtw": float(rows["dtw"].mean()), "dtw_scale": dtw_scale}
    summary["counts"] = {"mae": float(rows["count_error"].mean())}
    logger.info(
        "Evaluated %d repos: type mAP %.4f, type BLEU-1 %.4f, DTW %.4f, MAE %.4f",
        len(rows), summary["event_type"]["map"], summary["event_type"]["bleu"]["1"]["mean"],
        summary["time_delay"]["dtw"], summary["counts"]["mae"],
    )
    return MetricReport(rows, summary)


def window_truth(chain: EventChain, windows: TimeWindows) -> List[Prediction]:
    """Truth events of the simulation window, SOC excluded, scored 1."""
    if not chain.events:
        return []
    return _scored(chain_slice(chain, *windows.simulation).events)


def build_pairs(
    predictions: Mapping[str, Sequence],
    truth: Mapping[str, Sequence],
    repo_ids: Optional[Sequence[str]] = None,
) -> List[EvalPair]:
    """Pairs for `repo_ids` (default: every repo with truth); a missing side is empty."""
    repo_ids = sorted(truth) if repo_ids is None else sorted(repo_ids)
    return [make_pair(r, predictions.get(r, ()), truth.get(r, ())) for r in repo_ids]
