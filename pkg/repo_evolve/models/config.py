from __future__ import annotations

import hashlib
import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from repo_evolve.errors import ConfigError
from repo_evolve.models.events import TimeWindows


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RepoEmbeddingMode(str, Enum):
    NONE = "none"
    INDEX = "index"
    PROFILE = "profile"
    LEARNED = "learned"


class FeatureFlags(_Section):
    use_repo_embedding: RepoEmbeddingMode = RepoEmbeddingMode.LEARNED
    use_group_activity: bool = True
    use_no_event_type: bool = True
    # zeroes the user-group one-hot block of the input
    use_user_group: bool = True


class DataConfig(_Section):
    events_path: Path = Path("data/events.tsv")
    users_path: Path = Path("data/users.tsv")
    repos_path: Path = Path("data/repos.tsv")
    work_dir: Path = Path("work")
    max_reject_ratio: float = Field(0.01, ge=0.0, le=1.0)


def _to_epoch_seconds(value: Any) -> Any:
    if isinstance(value, datetime):
        moment = value if value.tzinfo else value.replace(tzinfo=timezone.utc)
        return int(moment.timestamp())
    if isinstance(value, str) and not value.lstrip("-").isdigit():
        return _to_epoch_seconds(datetime.fromisoformat(value))
    return value


class WindowsConfig(_Section):
    """UTC seconds or ISO-8601 timestamps (naive values are UTC)."""

    train_start: int = 1_420_070_400  # 2015-01-01
    train_end: int = 1_501_545_600  # 2017-08-01
    val_start: int = 1_501_545_600
    val_end: int = 1_502_841_600  # 2017-08-16
    sim_start: int = 1_502_841_600
    sim_end: int = 1_504_224_000  # 2017-09-01

    @field_validator("*", mode="before")
    @classmethod
    def coerce_timestamps(cls, value: Any) -> Any:
        return _to_epoch_seconds(value)

    @model_validator(mode="after")
    def check_order(self) -> "WindowsConfig":
        self.to_windows()
        return self

    def to_windows(self) -> TimeWindows:
        return TimeWindows(**self.model_dump())


class GroupingConfig(_Section):
    n_groups: int = Field(100, ge=1)
    seed: int = 42
    max_iter: int = Field(300, ge=1)
    tol: float = Field(1e-6, ge=0.0)
    scan_k: List[int] = Field(default_factory=lambda: [10, 25, 50, 75, 100, 125, 150])


class EmbeddingConfig(_Section):
    dim: int = Field(256, ge=1)
    layers: int = Field(2, ge=1)
    neighbor_samples: Tuple[int, ...] = (10, 10)
    negatives: int = Field(10, ge=1)
    epochs: int = Field(5, ge=0)
    batch_size: int = Field(512, ge=1)
    learning_rate: float = Field(0.01, gt=0.0)
    seed: int = 42

    @model_validator(mode="after")
    def check_neighbor_samples(self) -> "EmbeddingConfig":
        if len(self.neighbor_samples) != self.layers or min(self.neighbor_samples) < 1:
            raise ValueError("neighbor_samples needs one positive size per layer")
        return self


class MtsConfig(_Section):
    lstm_hidden: Tuple[int, int] = (250, 150)
    branch_hidden: Tuple[int, int] = (128, 64)
    dropout: float = Field(0.5, ge=0.0, lt=1.0)
    window_size: int = Field(20, ge=1)
    batch_size: int = Field(256, ge=1)
    epochs: int = Field(150, ge=1)
    loss_weights: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    learning_rate: float = Field(1e-3, gt=0.0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0.0)
    seed: int = 42

    @field_validator("lstm_hidden", "branch_hidden")
    @classmethod
    def check_sizes(cls, sizes: Tuple[int, int]) -> Tuple[int, int]:
        if min(sizes) < 1:
            raise ValueError("layer sizes must be positive")
        return sizes

    @field_validator("loss_weights")
    @classmethod
    def check_weights(cls, weights: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if min(weights) < 0:
            raise ValueError("loss weights must be non-negative")
        return weights


class SimConfig(_Section):
    decode: Literal["argmax", "sample"] = "argmax"
    max_events_per_repo: int = Field(100_000, ge=1)
    seed: int = 42


class MetricsConfig(_Section):
    map_mode: Literal["positional", "multiset"] = "positional"
    dtw_scale: float = Field(1.0, gt=0.0)


class SynthConfig(_Section):
    """Markov-chain event generator; see repo_evolve.synth."""

    n_repos: int = Field(200, ge=1)
    n_users: int = Field(400, ge=2)
    event_types: List[str] = Field(default_factory=lambda: ["Push", "Issues", "Watch"])
    transitions: List[List[float]] = Field(
        default_factory=lambda: [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]
    )
    # fixed delay in hours per state; a gamma draw when gamma_shape is set
    delay_hours: List[float] = Field(default_factory=lambda: [1.0, 1.0, 1.0])
    gamma_shape: Optional[List[float]] = None
    # population emitting each state's actor
    state_population: List[int] = Field(default_factory=lambda: [0, 0, 1])
    one_time_actor_fraction: float = Field(0.0, ge=0.0, le=1.0)
    dormant_fraction: float = Field(0.0, ge=0.0, le=1.0)
    history_hours: float = Field(240.0, gt=0.0)
    repos_per_creator: int = Field(2, ge=1)
    seed: int = 7

    @model_validator(mode="after")
    def check_consistent(self) -> "SynthConfig":
        states = len(self.event_types)
        if len(self.transitions) != states or any(len(row) != states for row in self.transitions):
            raise ValueError("transitions must be a square matrix over event_types")
        if any(abs(sum(row) - 1.0) > 1e-9 or min(row) < 0 for row in self.transitions):
            raise ValueError("transition rows must be probability vectors")
        if len(self.delay_hours) != states or min(self.delay_hours) < 0:
            raise ValueError("delay_hours needs one non-negative delay per state")
        if self.gamma_shape is not None and (len(self.gamma_shape) != states or min(self.gamma_shape) <= 0):
            raise ValueError("gamma_shape needs one positive shape per state")
        if len(self.state_population) != states or min(self.state_population) < 0:
            raise ValueError("state_population needs one population index per state")
        return self


PRESETS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "baseline": {
        "features": {"use_repo_embedding": "none", "use_group_activity": False, "use_no_event_type": False}
    },
    "mts_all": {"features": {}},
    "mts_all_minus_fr": {"features": {"use_repo_embedding": "none"}},
    "mts_all_minus_act": {"features": {"use_group_activity": False}},
    "mts_all_idx": {"features": {"use_repo_embedding": "index"}},
    "mts_all_profile": {"features": {"use_repo_embedding": "profile"}},
    "mts_all_11": {"features": {"use_no_event_type": False}},
    "sts_all": {"features": {}, "model": {"loss_weights": (1.0, 0.0, 0.0)}},
    "sts_all_minus_group": {"features": {"use_user_group": False}, "model": {"loss_weights": (1.0, 0.0, 0.0)}},
}


class PipelineConfig(_Section):
    preset: Optional[str] = None
    threads: Optional[int] = Field(None, ge=1)
    data: DataConfig = DataConfig()
    windows: WindowsConfig = WindowsConfig()
    grouping: GroupingConfig = GroupingConfig()
    embedding: EmbeddingConfig = EmbeddingConfig()
    model: MtsConfig = MtsConfig()
    features: FeatureFlags = FeatureFlags()
    simulation: SimConfig = SimConfig()
    metrics: MetricsConfig = MetricsConfig()
    synth: SynthConfig = SynthConfig()

    @field_validator("preset")
    @classmethod
    def check_preset(cls, preset: Optional[str]) -> Optional[str]:
        if preset is not None and preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; choose one of {sorted(PRESETS)}")
        return preset

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _parse_override(raw: str) -> Tuple[List[str], Any]:
    if "=" not in raw:
        raise ConfigError(f"Override {raw!r} must look like section.key=value")
    dotted, value = raw.split("=", 1)
    try:
        parsed = tomllib.loads(f"v = {value}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value
    return dotted.strip().split("."), parsed


def _merge(target: Dict[str, Any], updates: Dict[str, Any]):
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(target.get(key), dict):
            _merge(target[key], value)
        else:
            target[key] = value


def _format_validation_error(error: ValidationError) -> str:
    lines = [f"{len(error.errors())} invalid config field(s):"]
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"  {location}: {item['msg']}")
    return "\n".join(lines)


def build_config(raw: Dict[str, Any], overrides: Sequence[str] = ()) -> PipelineConfig:
    raw = json.loads(json.dumps(raw, default=str))
    for override in overrides:
        keys, value = _parse_override(override)
        node = raw
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"Override {override!r} descends into a non-table value")
        node[keys[-1]] = value

    preset = raw.get("preset")
    if preset in PRESETS:
        # preset first, explicit values win
        merged: Dict[str, Any] = json.loads(json.dumps(PRESETS[preset]))
        _merge(merged, {k: v for k, v in raw.items()})
        raw = merged
    try:
        return PipelineConfig.model_validate(raw)
    except ValidationError as error:
        raise ConfigError(_format_validation_error(error)) from None


def load_config(path: Optional[Path], overrides: Sequence[str] = ()) -> PipelineConfig:
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file {path} does not exist")
        try:
            with open(path, "rb") as file:
                raw = tomllib.load(file)
        except tomllib.TOMLDecodeError as error:
            raise ConfigError(f"{path}: {error}") from None
    return build_config(raw, overrides)
