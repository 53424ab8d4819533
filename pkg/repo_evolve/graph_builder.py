import logging
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from tqdm import tqdm

from repo_evolve.errors import DataError
from repo_evolve.models.profiles import RepoProfile
from repo_evolve.models.repo_graph import RepoGraph

logger = logging.getLogger(__name__)

EMBEDDING_DIM = 256


def build_repo_graph(profiles: Mapping[str, RepoProfile]) -> RepoGraph:
    """Repos are nodes; two repos share an edge when the same user created both."""
    graph = RepoGraph()
    by_creator: Dict[str, List[str]] = defaultdict(list)
    for repo_id in sorted(profiles):
        profile = profiles[repo_id]
        graph.add_repo(repo_id, profile.attributes)
        by_creator[profile.creator_user_id].append(repo_id)
    for repos in by_creator.values():
        for a, b in combinations(repos, 2):
            graph.add_edge(a, b)
    logger.info("Built %s", graph)
    return graph


class MeanAggregator(nn.Module):
    """W . [h_v ; mean of neighbor h_u]"""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.linear = nn.Linear(2 * in_dim, out_dim)

    def forward(self, h: torch.Tensor, neighbor_mean: torch.Tensor) -> torch.Tensor:
        return self.linear(torch.cat([h, neighbor_mean], dim=-1))


class GraphSageEncoder(nn.Module):
    def __init__(self, in_dim: int, dim: int, layers: int = 2):
        super().__init__()
        sizes = [in_dim] + [dim] * layers
        self.layers = nn.ModuleList(MeanAggregator(a, b) for a, b in zip(sizes[:-1], sizes[1:]))

    def forward(self, x: torch.Tensor, adjacencies: Sequence[torch.Tensor]) -> torch.Tensor:
        h = x
        for depth, (layer, adjacency) in enumerate(zip(self.layers, adjacencies)):
            h = layer(h, torch.sparse.mm(adjacency, h))
            if depth < len(self.layers) - 1:
                h = F.relu(h)
            h = F.normalize(h, dim=-1)
        return h


def mean_adjacency(neighbors: Sequence[Sequence[int]], n: int) -> torch.Tensor:
    """Row-normalized sparse adjacency; isolated nodes get an all-zero row."""
    rows, cols, values = [], [], []
    for node, adjacent in enumerate(neighbors):
        for other in adjacent:
            rows.append(node)
            cols.append(other)
            values.append(1.0 / len(adjacent))
    indices = torch.tensor([rows, cols], dtype=torch.int64).reshape(2, -1)
    return torch.sparse_coo_tensor(indices, torch.tensor(values, dtype=torch.float32), (n, n)).coalesce()


def sample_neighbors(neighbors: Sequence[Sequence[int]], size: int, rng: np.random.Generator) -> List[List[int]]:
    """Up to `size` neighbors per node without replacement; exhaustive when the degree allows."""
    sampled = []
    for adjacent in neighbors:
        if len(adjacent) <= size:
            sampled.append(list(adjacent))
        else:
            sampled.append(sorted(rng.choice(adjacent, size=size, replace=False).tolist()))
    return sampled


@dataclass
class RepoEmbeddingModel:
    repo_ids: Tuple[str, ...]
    vectors: np.ndarray
    weights: Dict[str, np.ndarray]
    attribute_mean: np.ndarray
    attribute_scale: np.ndarray
    loss_history: List[float] = field(default_factory=list)

    def __post_init__(self):
        self._index = {repo_id: i for i, repo_id in enumerate(self.repo_ids)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __contains__(self, repo_id: str) -> bool:
        return repo_id in self._index

    def vector(self, repo_id: str) -> Optional[np.ndarray]:
        index = self._index.get(repo_id)
        return None if index is None else self.vectors[index]

    def encoder(self) -> GraphSageEncoder:
        in_dim = self.attribute_mean.shape[0]
        layers = len([k for k in self.weights if k.endswith("linear.weight")])
        encoder = GraphSageEncoder(in_dim, self.dim, layers)
        encoder.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in self.weights.items()})
        return encoder

    def embed_graph(self, graph: RepoGraph) -> "RepoEmbeddingModel":
        """Applies the stored aggregator weights to another graph without retraining."""
        vectors = _infer(self.encoder(), graph, self.attribute_mean, self.attribute_scale)
        return RepoEmbeddingModel(
            tuple(graph.repo_ids), vectors, self.weights, self.attribute_mean, self.attribute_scale
        )


def _standardized(graph: RepoGraph, mean: np.ndarray, scale: np.ndarray) -> torch.Tensor:
    return torch.tensor((graph.attribute_matrix() - mean) / scale, dtype=torch.float32)


def _infer(encoder: GraphSageEncoder, graph: RepoGraph, mean: np.ndarray, scale: np.ndarray) -> np.ndarray:
    n = len(graph)
    full = mean_adjacency(graph.neighbor_lists(), n)
    encoder.eval()
    with torch.no_grad():
        z = encoder(_standardized(graph, mean, scale), [full] * len(encoder.layers)).double().numpy()
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    return z / np.where(norms > 0, norms, 1.0)


def learn_embeddings(
    graph: RepoGraph,
    dim: int = EMBEDDING_DIM,
    layers: int = 2,
    neighbor_samples: Sequence[int] = (10, 10),
    negatives: int = 10,
    epochs: int = 5,
    batch_size: int = 512,
    learning_rate: float = 0.01,
    seed: int = 42,
) -> RepoEmbeddingModel:
    """
    Mean-aggregator graph convolution trained on edge prediction with negative
    sampling: for an edge (u, v), -log s(z_u.z_v) - sum_n log s(-z_u.z_n).
    Final embeddings use full neighborhoods and are L2-normalized.
    """
    if not len(graph):
        raise DataError("Cannot learn embeddings for an empty graph")
    if len(neighbor_samples) != layers:
        raise DataError(f"Need one neighbor sample size per layer, got {neighbor_samples} for {layers} layers")

    attributes = graph.attribute_matrix()
    mean = attributes.mean(axis=0)
    scale = attributes.std(axis=0)
    scale[scale == 0] = 1.0
    x = _standardized(graph, mean, scale)
    n = len(graph)
    neighbors = graph.neighbor_lists()
    edges = graph.edge_index()

    with torch.random.fork_rng():
        torch.manual_seed(seed)
        encoder = GraphSageEncoder(x.shape[1], dim, layers)
    optimizer = torch.optim.Adam(encoder.parameters(), lr=learning_rate)
    rng = np.random.default_rng(seed)

    history: List[float] = []
    if edges.shape[1] == 0:
        logger.warning("Repo graph has no edges; embeddings come from untrained aggregators")
    else:
        encoder.train()
        for _ in tqdm(range(epochs), desc="embed-repos", disable=None):
            order = rng.permutation(edges.shape[1])
            total, batches = 0.0, 0
            for start in range(0, len(order), batch_size):
                batch = order[start : start + batch_size]
                u = torch.from_numpy(edges[0, batch])
                v = torch.from_numpy(edges[1, batch])
                negative = torch.from_numpy(rng.integers(0, n, size=(len(batch), negatives)))
                adjacencies = [mean_adjacency(sample_neighbors(neighbors, size, rng), n) for size in neighbor_samples]

                z = encoder(x, adjacencies)
                positive_score = (z[u] * z[v]).sum(dim=-1)
                negative_score = (z[u].unsqueeze(1) * z[negative]).sum(dim=-1)
                loss = -F.logsigmoid(positive_score).mean() - F.logsigmoid(-negative_score).sum(dim=1).mean()

                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total += loss.item()
                batches += 1
            history.append(total / batches)
            logger.debug("embedding epoch %d loss %.6f", len(history), history[-1])

    vectors = _infer(encoder, graph, mean, scale)
    weights = {k: v.detach().numpy().copy() for k, v in encoder.state_dict().items()}
    logger.info("Learned %d-d embeddings for %d repos", dim, n)
    return RepoEmbeddingModel(tuple(graph.repo_ids), vectors, weights, mean, scale, history)
