from typing import Dict, List, Optional

import networkx as nx
import numpy as np

from repo_evolve.errors import DataError


class RepoGraph:
    """Undirected, unweighted co-creator graph; nodes carry attribute vectors."""

    def __init__(self):
        self.graph = nx.Graph()
        self.attribute_dim: Optional[int] = None

    def add_repo(self, repo_id: str, attributes: np.ndarray):
        attributes = np.asarray(attributes, dtype=np.float64)
        if self.attribute_dim is None:
            self.attribute_dim = attributes.shape[0]
        elif attributes.shape != (self.attribute_dim,):
            raise DataError(f"{repo_id}: attribute shape {attributes.shape}, expected ({self.attribute_dim},)")
        if not np.all(np.isfinite(attributes)):
            raise DataError(f"{repo_id}: non-finite attributes")
        self.graph.add_node(repo_id, attributes=attributes)

    def add_edge(self, from_repo: str, to_repo: str):
        if from_repo == to_repo:
            raise DataError(f"Self-loop on {from_repo}")
        self.graph.add_edge(from_repo, to_repo)

    @property
    def repo_ids(self) -> List[str]:
        return list(self.graph.nodes)

    def __len__(self) -> int:
        return self.graph.number_of_nodes()

    @property
    def edge_count(self) -> int:
        return self.graph.number_of_edges()

    def attribute_matrix(self) -> np.ndarray:
        if not len(self):
            return np.zeros((0, self.attribute_dim or 0))
        return np.vstack([self.graph.nodes[r]["attributes"] for r in self.graph.nodes])

    def neighbor_lists(self) -> List[List[int]]:
        """Neighbor indices per node, indexed by node order, sorted."""
        index: Dict[str, int] = {r: i for i, r in enumerate(self.graph.nodes)}
        return [sorted(index[n] for n in self.graph.neighbors(r)) for r in self.graph.nodes]

    def edge_index(self) -> np.ndarray:
        """Both directions of every edge as a (2, 2E) index array."""
        index = {r: i for i, r in enumerate(self.graph.nodes)}
        pairs = [(index[a], index[b]) for a, b in self.graph.edges]
        pairs += [(b, a) for a, b in pairs]
        return np.array(sorted(pairs), dtype=np.int64).T.reshape(2, -1)

    def __str__(self):
        return f"RepoGraph({len(self)} repos, {self.edge_count} edges)"
