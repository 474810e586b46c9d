"""Graphs, TU-format dataset I/O, splits and batching."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ConfigError, FormatError

DEFAULT_MAX_DEGREE = 64


@dataclass
class Graph:
    """Undirected, edge-weighted graph with node features.

    ``edges`` is an ``[E, 2]`` integer array holding both directions of every
    undirected edge; a self-loop ``(u, u)`` is stored once.
    """

    node_count: int
    edges: np.ndarray
    weights: np.ndarray
    node_features: np.ndarray
    label: Optional[int] = None
    _adj: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        if self.node_features.ndim != 2 or self.node_features.shape[0] != self.node_count:
            raise ValueError(
                f"node_features must be [{self.node_count}, d], got {self.node_features.shape}"
            )
        if len(self.weights) != len(self.edges):
            raise ValueError("one weight per edge entry required")

    @classmethod
    def from_edge_list(cls, node_count, pairs, node_features, label=None, weights=None):
        """Build a graph from a possibly one-directional ``(u, v)`` list.

        Missing reverse directions are added; duplicate pairs are merged (the
        last weight wins).
        """
        if weights is None:
            weights = [1.0] * len(pairs)
        table = {}
        for (u, v), w in zip(pairs, weights):
            u, v = int(u), int(v)
            if not (0 <= u < node_count and 0 <= v < node_count):
                raise FormatError(f"edge ({u}, {v}) outside [0, {node_count})")
            table[(u, v)] = float(w)
            table[(v, u)] = float(w)
        keys = sorted(table)
        edges = np.array(keys, dtype=np.int64).reshape(-1, 2)
        return cls(node_count, edges, np.array([table[k] for k in keys]), node_features, label)

    @classmethod
    def from_adjacency(cls, adj, node_features, label=None):
        adj = np.asarray(adj, dtype=np.float64)
        rows, cols = np.nonzero(adj)
        edges = np.stack([rows, cols], axis=1)
        g = cls(adj.shape[0], edges, adj[rows, cols], node_features, label)
        g._adj = adj.copy()
        return g

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]

    @property
    def num_edges(self) -> int:
        """Number of undirected edges (self-loops count once)."""
        loops = int(np.sum(self.edges[:, 0] == self.edges[:, 1]))
        return (len(self.edges) - loops) // 2 + loops

    def adjacency(self) -> np.ndarray:
        """Dense weighted adjacency matrix (cached)."""
        if self._adj is None:
            adj = np.zeros((self.node_count, self.node_count))
            if len(self.edges):
                adj[self.edges[:, 0], self.edges[:, 1]] = self.weights
            self._adj = adj
        return self._adj

    def undirected_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Each undirected edge once as ``u <= v`` with its weight."""
        mask = self.edges[:, 0] <= self.edges[:, 1]
        return self.edges[mask], self.weights[mask]

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.node_count, dtype=np.int64)
        np.add.at(deg, self.edges[:, 0], 1)
        return deg

    def validate(self) -> None:
        """Check the structural invariants; raises ``FormatError``."""
        e = self.edges
        if len(e) and (e.min() < 0 or e.max() >= self.node_count):
            raise FormatError("edge endpoint out of range")
        if not np.all(np.isfinite(self.weights)):
            raise FormatError("non-finite edge weight")
        keys = {}
        for (u, v), w in zip(e.tolist(), self.weights.tolist()):
            if (u, v) in keys:
                raise FormatError(f"duplicate edge ({u}, {v})")
            keys[(u, v)] = w
        for (u, v), w in keys.items():
            if keys.get((v, u)) != w:
                raise FormatError(f"edge ({u}, {v}) lacks a symmetric twin of equal weight")

    def permuted(self, perm: Sequence[int]) -> "Graph":
        """Relabel nodes: old node ``perm[i]`` becomes new node ``i``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return Graph(self.node_count, inv[self.edges], self.weights.copy(),
                     self.node_features[perm], self.label)


@dataclass
class GraphDataset:
    graphs: list
    num_classes: int
    feature_dim: int
    name: str = "dataset"
    featurization: str = "node_labels"

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    @property
    def labels(self) -> np.ndarray:
        """Class index per graph; -1 where unlabeled."""
        return np.array([-1 if g.label is None else g.label for g in self.graphs], dtype=np.int64)

    @property
    def has_labels(self) -> bool:
        return all(g.label is not None for g in self.graphs)

    def without_labels(self) -> "GraphDataset":
        """Label-stripped copy sharing the (read-only) structure arrays."""
        graphs = [replace(g, label=None) for g in self.graphs]
        for new, old in zip(graphs, self.graphs):
            new._adj = old._adj
        return replace(self, graphs=graphs)

    def subset(self, indices) -> "GraphDataset":
        return replace(self, graphs=[self.graphs[i] for i in indices])

    def validate(self) -> None:
        for g in self.graphs:
            if g.feature_dim != self.feature_dim:
                raise FormatError("graphs disagree on feature_dim")
            if g.label is not None and not 0 <= g.label < self.num_classes:
                raise FormatError(f"label {g.label} outside [0, {self.num_classes})")
            g.validate()


@dataclass(frozen=True)
class SplitSpec:
    labeled_fraction: float = 0.05
    fold_count: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ConfigError("labeled_fraction must lie in (0, 1]")
        if self.fold_count < 2:
            raise ConfigError("fold_count must be >= 2")


# ----------------------------------------------------------------------------
# TU benchmark format


def _read_ints(path: Path, ncols: int) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            tokens = [t.strip() for t in line.split(",")]
            if len(tokens) != ncols:
                raise FormatError(f"{path.name}:{lineno}: expected {ncols} fields, got {len(tokens)}")
            try:
                rows.append([int(t) for t in tokens])
            except ValueError:
                raise FormatError(f"{path.name}:{lineno}: non-integer token in {line!r}") from None
    return np.array(rows, dtype=np.int64).reshape(-1, ncols)


def _one_hot(values: np.ndarray, depth: int) -> np.ndarray:
    out = np.zeros((len(values), depth))
    out[np.arange(len(values)), values] = 1.0
    return out


def parse_tu_dataset(dir_path, name: str, max_degree: int = DEFAULT_MAX_DEGREE) -> GraphDataset:
    """Read a dataset in the TU graph-kernel benchmark text format.

    Node labels become one-hot node features. Without a node-label file the
    features are one-hot degrees, capped at ``max_degree``. Graph labels are
    remapped to ``0..C-1`` in sorted order.
    """
    root = Path(dir_path)
    paths = {k: root / f"{name}_{k}.txt" for k in ("A", "graph_indicator", "graph_labels")}
    for p in paths.values():
        if not p.is_file():
            raise FileNotFoundError(f"missing TU file {p}")

    indicator = _read_ints(paths["graph_indicator"], 1)[:, 0]
    graph_labels = _read_ints(paths["graph_labels"], 1)[:, 0]
    edges = _read_ints(paths["A"], 2) - 1
    n_nodes = len(indicator)

    graph_ids = np.unique(indicator)
    if len(graph_labels) != len(graph_ids):
        raise FormatError(f"{len(graph_labels)} graph labels for {len(graph_ids)} graphs")
    if len(edges) and (edges.min() < 0 or edges.max() >= n_nodes):
        raise FormatError("edge references a node outside the indicator file")

    node_label_path = root / f"{name}_node_labels.txt"
    if node_label_path.is_file():
        raw = _read_ints(node_label_path, 1)[:, 0]
        if len(raw) != n_nodes:
            raise FormatError("node label count differs from node count")
        values, codes = np.unique(raw, return_inverse=True)
        features = _one_hot(codes, len(values))
        featurization = "node_labels"
    else:
        features = None
        featurization = "degree"

    classes, label_codes = np.unique(graph_labels, return_inverse=True)

    # nodes of one graph are contiguous in the indicator file
    if np.any(np.diff(indicator) < 0):
        raise FormatError("graph indicator is not grouped by graph")
    starts = np.searchsorted(indicator, graph_ids, side="left")
    stops = np.searchsorted(indicator, graph_ids, side="right")
    owner = np.searchsorted(graph_ids, indicator)

    edge_owner = owner[edges[:, 0]]
    crossing = edge_owner != owner[edges[:, 1]]
    if np.any(crossing):
        bad = edges[crossing][0] + 1
        raise FormatError(f"edge {tuple(bad.tolist())} connects nodes of different graphs")
    counts = np.bincount(edge_owner, minlength=len(graph_ids))
    edge_groups = np.split(edges[np.argsort(edge_owner, kind="stable")], np.cumsum(counts)[:-1])

    structures = []
    for gi, (lo, hi) in enumerate(zip(starts, stops)):
        local = edge_groups[gi] - lo
        structures.append((hi - lo, local))

    graphs = []
    if featurization == "degree":
        degs = []
        for n, local in structures:
            tmp = Graph.from_edge_list(n, local.tolist(), np.zeros((n, 1)))
            degs.append(tmp.degrees())
        cap = min(max_degree, max((int(d.max()) for d in degs if len(d)), default=0))
        for gi, ((n, local), d) in enumerate(zip(structures, degs)):
            feats = _one_hot(np.minimum(d, cap), cap + 1)
            graphs.append(Graph.from_edge_list(n, local.tolist(), feats, int(label_codes[gi])))
    else:
        for gi, ((n, local), lo) in enumerate(zip(structures, starts)):
            graphs.append(Graph.from_edge_list(n, local.tolist(), features[lo:lo + n],
                                               int(label_codes[gi])))

    return GraphDataset(graphs, num_classes=len(classes), feature_dim=graphs[0].feature_dim,
                        name=name, featurization=featurization)


def write_tu_dataset(ds: GraphDataset, dir_path, name: Optional[str] = None) -> Path:
    """Write ``ds`` in TU format (unit edge weights; labels as stored)."""
    name = name or ds.name
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    offset = 0
    a_lines, ind_lines, lab_lines, node_lines = [], [], [], []
    for gid, g in enumerate(ds.graphs, 1):
        for u, v in g.edges.tolist():
            a_lines.append(f"{u + offset + 1}, {v + offset + 1}")
        ind_lines.extend([str(gid)] * g.node_count)
        lab_lines.append(str(-1 if g.label is None else g.label))
        node_lines.extend(str(int(i)) for i in np.argmax(g.node_features, axis=1))
        offset += g.node_count
    for suffix, lines in (("A", a_lines), ("graph_indicator", ind_lines),
                          ("graph_labels", lab_lines)):
        (root / f"{name}_{suffix}.txt").write_text("\n".join(lines) + ("\n" if lines else ""))
    if ds.featurization == "node_labels":
        (root / f"{name}_node_labels.txt").write_text("\n".join(node_lines) + "\n")
    return root


# ----------------------------------------------------------------------------
# splits and batching


def _allocate(counts: np.ndarray, total: int) -> np.ndarray:
    """Split ``total`` across classes proportionally to ``counts``, one minimum each."""
    alloc = np.ones_like(counts)
    share = counts / counts.sum() * total
    while alloc.sum() < total:
        deficit = np.where(alloc < counts, share - alloc, -np.inf)
        alloc[int(np.argmax(deficit))] += 1
    return alloc


def split_semi(ds: GraphDataset, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Stratified labeled/unlabeled split; every class gets a labeled graph."""
    labels = ds.labels
    if np.any(labels < 0):
        raise ConfigError("split_semi requires every graph to be labeled")
    n = len(labels)
    target = int(round(spec.labeled_fraction * n))
    classes, counts = np.unique(labels, return_counts=True)
    if target < len(classes):
        raise ConfigError(
            f"labeled fraction {spec.labeled_fraction} yields {target} graphs for {len(classes)} classes"
        )
    rng = np.random.default_rng(spec.seed)
    alloc = _allocate(counts, min(target, n))
    labeled = []
    for c, k in zip(classes, alloc):
        members = np.flatnonzero(labels == c)
        labeled.extend(rng.permutation(members)[:k].tolist())
    labeled = np.sort(np.array(labeled, dtype=np.int64))
    unlabeled = np.setdiff1d(np.arange(n), labeled)
    return labeled, unlabeled


def make_folds(ds, fold_count: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified k-fold partition; test folds differ in size by at most one.

    ``ds`` may be a dataset or an array of labels.
    """
    labels = ds.labels if isinstance(ds, GraphDataset) else np.asarray(ds)
    n = len(labels)
    if fold_count < 2:
        raise ConfigError("fold_count must be >= 2")
    if fold_count > n:
        raise ConfigError(f"fold_count {fold_count} exceeds dataset size {n}")
    rng = np.random.default_rng(seed)
    ordered = []
    for c in np.unique(labels):
        ordered.extend(rng.permutation(np.flatnonzero(labels == c)).tolist())
    ordered = np.array(ordered, dtype=np.int64)
    assignment = np.empty(n, dtype=np.int64)
    assignment[ordered] = np.arange(n) % fold_count
    all_idx = np.arange(n)
    return [(all_idx[assignment != k], all_idx[assignment == k]) for k in range(fold_count)]


def batch_iter(indices, batch_size: int, seed: int = 0, shuffle: bool = True) -> Iterator[np.ndarray]:
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    indices = np.asarray(indices, dtype=np.int64)
    if shuffle:
        indices = np.random.default_rng(seed).permutation(indices)
    for start in range(0, len(indices), batch_size):
        yield indices[start:start + batch_size]


def num_batches(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)
