"""Planted two-class benchmark: Erdos-Renyi graphs vs. graphs hiding a dense subgraph."""

from __future__ import annotations

import numpy as np

from .graph_core import Graph, GraphDataset


def _er_pairs(rng: np.random.Generator, n: int, p: float) -> set:
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    return set(zip(iu[keep].tolist(), ju[keep].tolist()))


def planted_dataset(n_graphs: int = 200, nodes=(16, 24), edge_prob: float = 0.2,
                    clique_size: int = 7, clique_density: float = 1.0, max_degree: int = 12,
                    seed: int = 0) -> GraphDataset:
    """Balanced classes with matched expected edge counts.

    Class 0 is G(n, p). Class 1 plants a subgraph of ``clique_size`` nodes with
    edge density ``clique_density`` and fills the remaining pairs at a reduced
    probability, so both classes have the same expected number of edges and
    only the local structure tells them apart. Node features are one-hot
    degrees capped at ``max_degree``.
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(n_graphs) % 2
    rng.shuffle(labels)
    graphs = []
    for y in labels:
        n = int(rng.integers(nodes[0], nodes[1] + 1))
        total = n * (n - 1) / 2
        if y == 0:
            pairs = _er_pairs(rng, n, edge_prob)
        else:
            members = np.sort(rng.choice(n, size=clique_size, replace=False))
            inside = clique_size * (clique_size - 1) / 2
            p_rest = max(0.0, (edge_prob * total - clique_density * inside) / (total - inside))
            pairs = {(u, v) for u, v in _er_pairs(rng, n, p_rest)
                     if not (u in members and v in members)}
            for a in range(clique_size):
                for b in range(a + 1, clique_size):
                    if rng.random() < clique_density:
                        pairs.add((int(members[a]), int(members[b])))
        deg = np.zeros(n, dtype=np.int64)
        for u, v in pairs:
            deg[u] += 1
            deg[v] += 1
        feats = np.zeros((n, max_degree + 1))
        feats[np.arange(n), np.minimum(deg, max_degree)] = 1.0
        graphs.append(Graph.from_edge_list(n, sorted(pairs), feats, int(y)))
    return GraphDataset(graphs, num_classes=2, feature_dim=max_degree + 1, name="planted",
                        featurization="degree")
