import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
import torch

from repo_evolve.encoder import FeatureEncoder, SequenceDataset
from repo_evolve.errors import DataError, NumericError
from repo_evolve.graph_builder import RepoEmbeddingModel, build_repo_graph, learn_embeddings
from repo_evolve.grouping import (
    ActivityStats,
    GroupActivityTable,
    ScanRow,
    UserGroupModel,
    assign_groups,
    build_user_features,
    compute_group_activity,
    fit_user_groups,
    scan_k,
)
from repo_evolve.ingestion import IngestResult, inject_no_event, load_repo_profiles, load_user_profiles, read_event_file
from repo_evolve.metrics import MetricReport, build_pairs, evaluate, window_truth
from repo_evolve.models.config import PipelineConfig, RepoEmbeddingMode
from repo_evolve.models.events import Event, EventChain, EventType, TimeWindows
from repo_evolve.models.profiles import RepoProfile, UserProfile
from repo_evolve.models.run_state import RunManifest, StageManifest
from repo_evolve.network import (
    MtsNetwork,
    TrainResult,
    grad_check,
    model_arrays,
    model_from_arrays,
    tiny_model,
    train_model,
)
from repo_evolve.simulator import (
    EvolutionSimulator,
    Prediction,
    SimulationResult,
    baseline_noevent,
    baseline_previous,
    baseline_random,
    history_before,
)
from repo_evolve.synth import generate, write_dataset
from repo_evolve.util.storage import (
    read_bundle,
    read_chains,
    read_event_table,
    read_json,
    sha256_file,
    write_bundle,
    write_chains,
    write_event_table,
    write_json,
)

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4
BASELINES = ("random", "previous", "noevent")


class Workspace:
    def __init__(self, work_dir: Path):
        self.root = Path(work_dir)

    @property
    def chains(self) -> Path:
        return self.root / "chains.tsv"

    @property
    def ingest_summary(self) -> Path:
        return self.root / "ingest.json"

    @property
    def groups(self) -> Path:
        return self.root / "groups.bundle"

    @property
    def group_scan(self) -> Path:
        return self.root / "group_scan.tsv"

    @property
    def embeddings(self) -> Path:
        return self.root / "embeddings.bundle"

    @property
    def model(self) -> Path:
        return self.root / "model.bundle"

    @property
    def history(self) -> Path:
        return self.root / "history.tsv"

    @property
    def truth(self) -> Path:
        return self.root / "truth.tsv"

    def run_table(self, run: str) -> Path:
        return self.root / f"{run}.tsv"

    def run_manifest(self, run: str) -> Path:
        return self.root / f"{run}.manifest.json"

    def report(self, prefix: str) -> Tuple[Path, Path]:
        return self.root / f"{prefix}.tsv", self.root / f"{prefix}.json"

    def stage_manifest(self, stage: str) -> Path:
        return self.root / "manifests" / f"{stage}.json"


def _input_file(path: Path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Input file {path} does not exist")
    return path


def write_stage_manifest(
    workspace: Workspace,
    stage: str,
    config: PipelineConfig,
    seed: Optional[int],
    inputs: Iterable[Path],
    outputs: Iterable[Path],
):
    manifest = StageManifest(
        stage=stage,
        config_hash=config.config_hash(),
        seed=seed,
        inputs={Path(p).name: sha256_file(p) for p in inputs},
        outputs={Path(p).name: sha256_file(p) for p in outputs},
    )
    write_json(workspace.stage_manifest(stage), manifest)


def run_synth(config: PipelineConfig) -> Dict:
    dataset = generate(config.synth, config.windows.to_windows())
    paths = write_dataset(dataset, config.data)
    workspace = Workspace(config.data.work_dir)
    write_stage_manifest(workspace, "synth", config, config.synth.seed, [], paths)
    return dataset.process


def run_ingest(config: PipelineConfig) -> IngestResult:
    workspace = Workspace(config.data.work_dir)
    events_path = _input_file(config.data.events_path)
    result = read_event_file(events_path, config.data.max_reject_ratio)
    write_chains(workspace.chains, result.chains.values())
    write_json(
        workspace.ingest_summary,
        {
            "lines": result.total_lines,
            "repos": len(result.chains),
            "events": result.event_count,
            "rejected": dict(sorted(result.rejected.items())),
        },
    )
    write_stage_manifest(workspace, "ingest", config, None, [events_path], [workspace.chains, workspace.ingest_summary])
    return result


def save_groups(path: Path, model: UserGroupModel, activity: GroupActivityTable):
    user_ids = sorted(model.assignment)
    global_groups = sorted(activity.global_stats)
    repo_keys = sorted(activity.repo_stats)
    empty = np.zeros((0, 2 + len(ActivityStats().type_counts)))

    def stack(stats: List[ActivityStats]) -> np.ndarray:
        return np.vstack([s.vector() for s in stats]) if stats else empty

    write_bundle(
        path,
        {
            "centroids": model.centroids,
            "feature_mean": model.feature_mean,
            "feature_scale": model.feature_scale,
            "assignment": np.array([model.assignment[u] for u in user_ids], dtype=np.int64),
            "activity_global_groups": np.array(global_groups, dtype=np.int64),
            "activity_global": stack([activity.global_stats[g] for g in global_groups]),
            "activity_repo_groups": np.array([g for g, _ in repo_keys], dtype=np.int64),
            "activity_repo": stack([activity.repo_stats[k] for k in repo_keys]),
        },
        {
            "n_groups": model.n_groups,
            "seed": model.seed,
            "user_ids": user_ids,
            "activity_repo_ids": [r for _, r in repo_keys],
        },
    )


def _stats(row: np.ndarray) -> ActivityStats:
    return ActivityStats(float(row[0]), float(row[1]), row[2:].copy())


def load_groups(path: Path) -> Tuple[UserGroupModel, GroupActivityTable]:
    tensors, meta = read_bundle(path, "group-users")
    assignment = {u: int(g) for u, g in zip(meta["user_ids"], tensors["assignment"])}
    model = UserGroupModel(
        meta["n_groups"], tensors["centroids"], tensors["feature_mean"], tensors["feature_scale"], assignment, meta["seed"]
    )
    activity = GroupActivityTable(
        {int(g): _stats(row) for g, row in zip(tensors["activity_global_groups"], tensors["activity_global"])},
        {
            (int(g), r): _stats(row)
            for g, r, row in zip(tensors["activity_repo_groups"], meta["activity_repo_ids"], tensors["activity_repo"])
        },
    )
    return model, activity


def run_group_users(config: PipelineConfig, with_scan: bool = False) -> Tuple[UserGroupModel, List[ScanRow]]:
    workspace = Workspace(config.data.work_dir)
    chains = read_chains(workspace.chains)
    users_path = _input_file(config.data.users_path)
    profiles = load_user_profiles(users_path)
    window = config.windows.to_windows().train
    features = build_user_features(profiles, chains.values(), window)
    n_users = len(features.user_ids)
    if n_users < config.grouping.n_groups:
        raise DataError(f"{n_users} users active in the training window, fewer than {config.grouping.n_groups} groups")

    grouping = config.grouping
    outputs = [workspace.groups]
    rows: List[ScanRow] = []
    if with_scan:
        ks = [k for k in grouping.scan_k if k <= n_users]
        if len(ks) < len(grouping.scan_k):
            logger.warning("Skipping k values above the %d active users", n_users)
        mean = features.matrix.mean(axis=0)
        scale = features.matrix.std(axis=0)
        scale[scale == 0] = 1.0
        rows = scan_k((features.matrix - mean) / scale, ks, grouping.seed, grouping.max_iter, grouping.tol)
        pd.DataFrame([(r.k, r.inertia, r.silhouette) for r in rows], columns=["k", "inertia", "silhouette"]).to_csv(
            workspace.group_scan, sep="\t", index=False, lineterminator="\n", float_format="%.10g"
        )
        outputs.append(workspace.group_scan)

    model = fit_user_groups(features, grouping.n_groups, grouping.seed, grouping.max_iter, grouping.tol)
    activity = compute_group_activity(chains.values(), model.assignment, window)
    save_groups(workspace.groups, model, activity)
    write_stage_manifest(workspace, "group-users", config, grouping.seed, [workspace.chains, users_path], outputs)
    return model, rows


def save_embeddings(path: Path, embeddings: RepoEmbeddingModel):
    tensors = {
        "vectors": embeddings.vectors,
        "attribute_mean": embeddings.attribute_mean,
        "attribute_scale": embeddings.attribute_scale,
        "loss_history": np.array(embeddings.loss_history, dtype=np.float64),
    }
    tensors.update({f"weights/{name}": value for name, value in embeddings.weights.items()})
    write_bundle(path, tensors, {"repo_ids": list(embeddings.repo_ids)})


def load_embeddings(path: Path) -> RepoEmbeddingModel:
    tensors, meta = read_bundle(path, "embed-repos")
    weights = {k[len("weights/") :]: v for k, v in tensors.items() if k.startswith("weights/")}
    return RepoEmbeddingModel(
        tuple(meta["repo_ids"]),
        tensors["vectors"],
        weights,
        tensors["attribute_mean"],
        tensors["attribute_scale"],
        tensors["loss_history"].tolist(),
    )


def run_embed_repos(config: PipelineConfig, apply_to: Optional[Path] = None) -> RepoEmbeddingModel:
    """
    Learns repo embeddings from the co-creator graph. With `apply_to`, the
    stored aggregators embed the repos of another profile table instead.
    """
    workspace = Workspace(config.data.work_dir)
    if apply_to is not None:
        trained = load_embeddings(workspace.embeddings)
        source = _input_file(apply_to)
        embeddings = trained.embed_graph(build_repo_graph(load_repo_profiles(source)))
        output = workspace.root / f"embeddings.{source.stem}.bundle"
        save_embeddings(output, embeddings)
        write_stage_manifest(workspace, f"embed-repos.{source.stem}", config, None, [workspace.embeddings, source], [output])
        return embeddings

    repos_path = _input_file(config.data.repos_path)
    graph = build_repo_graph(load_repo_profiles(repos_path))
    e = config.embedding
    embeddings = learn_embeddings(
        graph, e.dim, e.layers, e.neighbor_samples, e.negatives, e.epochs, e.batch_size, e.learning_rate, e.seed
    )
    save_embeddings(workspace.embeddings, embeddings)
    write_stage_manifest(workspace, "embed-repos", config, e.seed, [repos_path], [workspace.embeddings])
    return embeddings


@dataclass
class PipelineContext:
    """Everything the model stages share: grouped chains and the feature encoder."""

    config: PipelineConfig
    workspace: Workspace
    chains: Dict[str, EventChain]
    model_chains: Dict[str, EventChain]
    group_model: UserGroupModel
    user_profiles: Dict[str, UserProfile]
    encoder: FeatureEncoder
    inputs: List[Path]

    @property
    def windows(self):
        return self.config.windows.to_windows()

    def seed_history(self, repo_id: str) -> EventChain:
        return seed_history(
            self.chains[repo_id],
            self.windows,
            self.group_model,
            self.user_profiles,
            self.config.features.use_no_event_type,
        )

    def truth_chain(self, repo_id: str) -> EventChain:
        return truth_chain(self.chains[repo_id], self.group_model, self.user_profiles)

    def eligible_repos(self) -> List[str]:
        """Repos with at least one real event in the training window."""
        start, end = self.windows.train
        return sorted(
            repo_id
            for repo_id, chain in self.chains.items()
            if any(e.event_type.is_concrete and start <= e.timestamp < end for e in chain.events)
        )


def prepare_chain(
    chain: EventChain,
    group_model: UserGroupModel,
    profiles: Mapping[str, UserProfile],
    use_no_event_type: bool,
) -> EventChain:
    if use_no_event_type:
        chain = inject_no_event(chain, group_model.artificial_group)
    return assign_groups(chain, group_model, profiles)


def seed_history(
    chain: EventChain,
    windows: TimeWindows,
    group_model: UserGroupModel,
    profiles: Mapping[str, UserProfile],
    use_no_event_type: bool,
) -> EventChain:
    """
    Events before sim_start, as the model sees them. The raw chain is cut
    first so no inactivity marker can come from a later event.
    """
    return prepare_chain(history_before(chain, windows), group_model, profiles, use_no_event_type)


def truth_chain(chain: EventChain, group_model: UserGroupModel, profiles: Mapping[str, UserProfile]) -> EventChain:
    """Always NoEvent-injected, whatever the feature flags say."""
    return prepare_chain(chain, group_model, profiles, True)


def load_context(config: PipelineConfig) -> PipelineContext:
    workspace = Workspace(config.data.work_dir)
    flags = config.features
    chains = read_chains(workspace.chains)
    group_model, activity = load_groups(workspace.groups)
    users_path = _input_file(config.data.users_path)
    user_profiles = load_user_profiles(users_path)
    inputs = [workspace.chains, workspace.groups, users_path]

    embeddings = None
    repo_profiles: Dict[str, RepoProfile] = {}
    if flags.use_repo_embedding == RepoEmbeddingMode.LEARNED:
        embeddings = load_embeddings(workspace.embeddings)
        inputs.append(workspace.embeddings)
    elif flags.use_repo_embedding == RepoEmbeddingMode.PROFILE:
        repos_path = _input_file(config.data.repos_path)
        repo_profiles = load_repo_profiles(repos_path)
        inputs.append(repos_path)
    repo_index = {repo_id: i + 1 for i, repo_id in enumerate(sorted(chains))}

    encoder = FeatureEncoder(group_model, activity, flags, embeddings, repo_profiles, repo_index)
    logger.info("Input layout %s (%d wide)", encoder.describe(), encoder.input_dim)
    model_chains = {
        repo_id: prepare_chain(chain, group_model, user_profiles, flags.use_no_event_type)
        for repo_id, chain in chains.items()
    }
    return PipelineContext(config, workspace, chains, model_chains, group_model, user_profiles, encoder, inputs)


def save_model(path: Path, model: MtsNetwork, config: PipelineConfig, best_epoch: int):
    write_bundle(
        path,
        model_arrays(model),
        {
            "architecture": model.architecture(),
            "features": config.features.model_dump(mode="json"),
            "best_epoch": best_epoch,
            "config_hash": config.config_hash(),
        },
    )


def load_model(context: PipelineContext) -> MtsNetwork:
    tensors, meta = read_bundle(context.workspace.model, "train")
    if meta["architecture"]["input_dim"] != context.encoder.input_dim:
        raise DataError(
            f"{context.workspace.model} expects {meta['architecture']['input_dim']}-wide inputs but the current "
            f"features give {context.encoder.input_dim}; rerun `repo-evolve train` with this config"
        )
    if meta["features"] != context.config.features.model_dump(mode="json"):
        logger.warning("Model was trained with features %s", meta["features"])
    return model_from_arrays(meta["architecture"], tensors)


def run_train(config: PipelineConfig) -> TrainResult:
    context = load_context(config)
    windows = context.windows
    chains = [context.model_chains[r] for r in context.eligible_repos()]
    window_size = config.model.window_size
    train_set = SequenceDataset(chains, context.encoder, window_size, windows.train)
    val_set = SequenceDataset(chains, context.encoder, window_size, windows.validation)
    logger.info("Training on %d windows, validating on %d", len(train_set), len(val_set))

    result = train_model(train_set, val_set, config.model)
    workspace = context.workspace
    save_model(workspace.model, result.model, config, result.best_epoch)
    pd.DataFrame(
        [(h.epoch, h.train_loss, h.val_loss, h.type_loss, h.delay_loss, h.group_loss) for h in result.history],
        columns=["epoch", "train_loss", "val_loss", "type_loss", "delay_loss", "group_loss"],
    ).to_csv(workspace.history, sep="\t", index=False, lineterminator="\n", float_format="%.10g")
    write_stage_manifest(workspace, "train", config, config.model.seed, context.inputs, [workspace.model, workspace.history])
    return result


def encoded_columns(encoder: FeatureEncoder) -> List[str]:
    columns = []
    for block in encoder.blocks.values():
        columns += [block.name] if block.size == 1 else [f"{block.name}_{i}" for i in range(block.size)]
    return columns


def run_encode(config: PipelineConfig, out: Path, repo_ids: Iterable[str] = ()) -> pd.DataFrame:
    """Encoded input rows of the chosen repos (default: all eligible), one line per event."""
    context = load_context(config)
    repo_ids = sorted(repo_ids) or context.eligible_repos()
    unknown = [r for r in repo_ids if r not in context.model_chains]
    if unknown:
        raise DataError(f"No chain for repos {unknown}")
    if not repo_ids:
        raise DataError("No repos to encode")

    frames = []
    for repo_id in repo_ids:
        chain = context.model_chains[repo_id]
        frame = pd.DataFrame(context.encoder.encode_chain(chain), columns=encoded_columns(context.encoder))
        frame.insert(0, "timestamp", [e.timestamp for e in chain.events])
        frame.insert(0, "event_type", [e.event_type.label for e in chain.events])
        frame.insert(0, "position", range(len(chain.events)))
        frame.insert(0, "repo_id", repo_id)
        frames.append(frame)
    table = pd.concat(frames, ignore_index=True)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out, sep="\t", index=False, lineterminator="\n", float_format="%.10g")
    logger.info("Wrote %d encoded rows (%d wide) to %s", len(table), context.encoder.input_dim, out)
    return table


def _event_rows(results: Mapping[str, Iterable[Prediction]]) -> List[Tuple]:
    rows = []
    for repo_id in sorted(results):
        for p in results[repo_id]:
            e = p.event
            group = -1 if e.user_group is None else e.user_group
            rows.append((repo_id, e.event_type.label, group, e.timestamp, e.delay_hours, p.type_score, p.group_score))
    return rows


def write_truth(context: PipelineContext, repo_ids: Iterable[str]) -> Path:
    truth = {r: window_truth(context.truth_chain(r), context.windows) for r in repo_ids}
    write_event_table(context.workspace.truth, _event_rows(truth))
    return context.workspace.truth


def _write_run(
    context: PipelineContext,
    run: str,
    mode: str,
    seed: int,
    results: Mapping[str, SimulationResult],
    repo_ids: List[str],
    model_path: Optional[Path] = None,
) -> Path:
    workspace = context.workspace
    table = workspace.run_table(run)
    write_event_table(table, _event_rows({r: res.predictions for r, res in results.items()}))
    truth = write_truth(context, repo_ids)
    write_json(
        workspace.run_manifest(run),
        RunManifest(
            run=run,
            mode=mode,
            config=context.config.model_dump(mode="json"),
            seed=seed,
            model_sha256=sha256_file(model_path) if model_path else None,
            repos=repo_ids,
            truncated=sorted(r for r, res in results.items() if res.truncated),
        ),
    )
    inputs = list(context.inputs) + ([model_path] if model_path else [])
    write_stage_manifest(workspace, run, context.config, seed, inputs, [table, workspace.run_manifest(run), truth])
    logger.info("Wrote %d events for %d repos to %s", sum(len(r) for r in results.values()), len(repo_ids), table)
    return table


def _simulator(context: PipelineContext) -> EvolutionSimulator:
    config = context.config
    return EvolutionSimulator(
        load_model(context),
        context.encoder,
        context.windows,
        config.model.window_size,
        config.simulation,
        config.features.use_no_event_type,
    )


def run_simulate(config: PipelineConfig, run: str = "simulation") -> Dict[str, SimulationResult]:
    context = load_context(config)
    repo_ids = context.eligible_repos()
    histories = {r: context.seed_history(r) for r in repo_ids}
    results = _simulator(context).simulate_all(histories)
    _write_run(context, run, "simulate", config.simulation.seed, results, repo_ids, context.workspace.model)
    return results


def run_predict(config: PipelineConfig, run: str = "prediction") -> Dict[str, SimulationResult]:
    context = load_context(config)
    chains = {r: context.truth_chain(r) for r in context.eligible_repos()}
    results = _simulator(context).predict_all(chains)
    _write_run(context, run, "predict", config.simulation.seed, results, sorted(results), context.workspace.model)
    return results


def run_baseline(config: PipelineConfig, kind: str, run: Optional[str] = None) -> Dict[str, SimulationResult]:
    if kind not in BASELINES:
        raise DataError(f"Unknown baseline {kind!r}; choose one of {BASELINES}")
    context = load_context(config)
    windows = context.windows
    cap = config.simulation.max_events_per_repo
    seed = config.simulation.seed
    repo_ids = context.eligible_repos()
    results = {}
    for repo_id in repo_ids:
        history = context.seed_history(repo_id)
        if kind == "random":
            results[repo_id] = baseline_random(repo_id, history, windows, context.group_model.total_groups, seed, cap)
        elif kind == "previous":
            results[repo_id] = baseline_previous(repo_id, history, windows, cap)
        else:
            results[repo_id] = baseline_noevent(repo_id, windows, context.group_model.artificial_group)
    _write_run(context, run or f"baseline_{kind}", f"baseline-{kind}", seed, results, repo_ids)
    return results


def read_predictions(path: Path, stage: str) -> Dict[str, List[Prediction]]:
    frame = read_event_table(path, stage)
    predictions: Dict[str, List[Prediction]] = {}
    for row in frame.itertuples(index=False):
        group = int(row.group)
        event = Event(EventType.from_label(row.event_type), None if group < 0 else group, int(row.timestamp), float(row.delay_hours))
        predictions.setdefault(row.repo_id, []).append(Prediction(event, float(row.type_score), float(row.group_score)))
    return predictions


def run_evaluate(
    config: PipelineConfig,
    predictions_path: Path,
    truth_path: Optional[Path] = None,
    prefix: str = "report",
) -> MetricReport:
    """
    Scores a prediction table against a truth table. Repos come from the
    run manifest when there is one, otherwise from both tables.
    """
    workspace = Workspace(config.data.work_dir)
    predictions_path = Path(predictions_path)
    truth_path = Path(truth_path) if truth_path else workspace.truth
    predictions = read_predictions(predictions_path, "simulate")
    truth = read_predictions(truth_path, "simulate")
    manifest_path = predictions_path.with_suffix(".manifest.json")
    if manifest_path.exists():
        repo_ids = read_json(manifest_path, "simulate")["repos"]
    else:
        repo_ids = sorted(set(predictions) | set(truth))

    report = evaluate(build_pairs(predictions, truth, repo_ids), config.metrics.map_mode, config.metrics.dtw_scale)
    tsv, summary = workspace.report(prefix)
    tsv.parent.mkdir(parents=True, exist_ok=True)
    report.rows.to_csv(tsv, sep="\t", index=False, lineterminator="\n", float_format="%.10g", na_rep="nan")
    write_json(summary, _json_safe(report.summary))
    write_stage_manifest(workspace, "evaluate", config, None, [predictions_path, truth_path], [tsv, summary])
    return report


def _json_safe(node):
    if isinstance(node, dict):
        return {k: _json_safe(v) for k, v in node.items()}
    if isinstance(node, float) and not np.isfinite(node):
        return None
    return node


def run_gradcheck(seed: int = 0, input_dim: int = 16, total_groups: int = 5, batch: int = 4, window: int = 3) -> Dict[str, float]:
    """Max relative gradient error for each branch alone and all three combined."""
    generator = torch.Generator().manual_seed(seed)
    inputs = torch.randn(batch, window, input_dim, generator=generator, dtype=torch.float64)
    types = torch.randint(0, 12, (batch,), generator=generator)
    delays = torch.rand(batch, generator=generator, dtype=torch.float64) * 10
    groups = torch.randint(0, total_groups, (batch,), generator=generator)
    model = tiny_model(input_dim, total_groups, seed)
    errors = {}
    for name, weights in (("type", (1, 0, 0)), ("delay", (0, 1, 0)), ("group", (0, 0, 1)), ("combined", (1, 1, 1))):
        errors[name] = grad_check(model, inputs, types, delays, groups, weights)
        logger.info("gradient check %s: max relative error %.3g", name, errors[name])
    worst = max(errors.values())
    if worst >= GRADCHECK_TOLERANCE:
        raise NumericError(f"Gradient check failed: max relative error {worst:.3g} >= {GRADCHECK_TOLERANCE}")
    return errors
