"""Augmented graph views: personalized-PageRank diffusion and edge dropping."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericalError
from .graph_core import Graph


class ViewKind(str, enum.Enum):
    IDENTITY = "identity"
    DIFFUSED = "diffuse"
    EDGE_DROPPED = "edge-drop"


@dataclass(frozen=True)
class DiffusionConfig:
    alpha: float = 0.2
    sparsify_epsilon: float = 1e-4
    truncation_order: int = 64  # series oracle only

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not np.isfinite(self.sparsify_epsilon) or self.sparsify_epsilon < 0:
            raise ConfigError("sparsify_epsilon must be finite and >= 0")
        if self.truncation_order < 1:
            raise ConfigError("truncation_order must be >= 1")


@dataclass
class View:
    graph: Graph
    origin_index: Optional[int] = None
    kind: ViewKind = ViewKind.IDENTITY

    @property
    def node_features(self):
        return self.graph.node_features


def transition_matrix(g: Graph) -> np.ndarray:
    """Symmetrically normalized adjacency ``D^-1/2 A D^-1/2``, no self-loops added."""
    if np.any(g.weights < 0):
        raise ValueError("negative edge weight")
    adj = g.adjacency()
    deg = adj.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = deg[nz] ** -0.5
    return inv_sqrt[:, None] * adj * inv_sqrt[None, :]


def ppr_matrix(T: np.ndarray, alpha: float) -> np.ndarray:
    """Closed form of ``sum_k alpha (1 - alpha)^k T^k``."""
    n = T.shape[0]
    system = np.eye(n) - (1.0 - alpha) * T
    try:
        S = alpha * np.linalg.solve(system, np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("diffusion system is singular") from exc
    if not np.all(np.isfinite(S)):
        raise NumericalError("diffusion produced non-finite entries")
    return S


def ppr_series(T: np.ndarray, alpha: float, order: int = 64) -> np.ndarray:
    """Truncated power series, used to cross-check ``ppr_matrix``."""
    n = T.shape[0]
    S = np.zeros((n, n))
    power = np.eye(n)
    coef = alpha
    for _ in range(order + 1):
        S += coef * power
        power = power @ T
        coef *= 1.0 - alpha
    return S


def sparsify(S: np.ndarray, epsilon: float) -> np.ndarray:
    out = np.where(np.abs(S) < epsilon, 0.0, S)
    np.fill_diagonal(out, np.diag(S))
    return out


def ppr_diffusion(g: Graph, cfg: DiffusionConfig = DiffusionConfig(), origin_index=None) -> View:
    S = ppr_matrix(transition_matrix(g), cfg.alpha)
    S = 0.5 * (S + S.T)
    S = sparsify(S, cfg.sparsify_epsilon)
    diffused = Graph.from_adjacency(S, g.node_features, g.label)
    return View(diffused, origin_index, ViewKind.DIFFUSED)


def random_edge_drop(g: Graph, drop_prob: float, seed: int, origin_index=None) -> View:
    """Remove each undirected edge independently with probability ``drop_prob``."""
    if not 0.0 <= drop_prob < 1.0:
        raise ConfigError(f"drop_prob must lie in [0, 1), got {drop_prob}")
    und, w = g.undirected_edges()
    keep = np.random.default_rng(seed).random(len(und)) >= drop_prob
    und, w = und[keep], w[keep]
    loops = und[:, 0] == und[:, 1]
    rev = und[~loops][:, ::-1]
    edges = np.concatenate([und, rev])
    weights = np.concatenate([w, w[~loops]])
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    dropped = Graph(g.node_count, edges[order], weights[order], g.node_features, g.label)
    return View(dropped, origin_index, ViewKind.EDGE_DROPPED)


def make_views(g: Graph, k: int = 1, strategy="diffuse", cfg: Optional[DiffusionConfig] = None,
               seed: int = 0, drop_prob: float = 0.2, origin_index=None) -> list[View]:
    if k < 1:
        raise ConfigError("k must be >= 1")
    try:
        kind = ViewKind(strategy)
    except ValueError:
        raise ConfigError(f"unknown augmentation strategy {strategy!r}") from None
    if kind is ViewKind.IDENTITY:
        return [View(g, origin_index, kind) for _ in range(k)]
    if kind is ViewKind.DIFFUSED:
        view = ppr_diffusion(g, cfg or DiffusionConfig(), origin_index)
        return [view] * k
    seeds = np.random.SeedSequence(seed).generate_state(k)
    return [random_edge_drop(g, drop_prob, int(s), origin_index) for s in seeds]
