"""GCN / GIN graph encoders with sum readout, and the MLP heads."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.linalg import block_diag

from . import tensor as tt
from .augment import View
from .errors import ConfigError, ShapeError
from .graph_core import Graph
from .tensor import Tensor

ENCODER_KINDS = ("gcn", "gin")


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "gcn"
    layer_count: int = 2
    hidden_dim: int = 64
    embedding_dim: int = 64
    final_relu: bool = False

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        if self.layer_count < 1 or self.hidden_dim < 1 or self.embedding_dim < 1:
            raise ConfigError("encoder layer count and dims must be >= 1")


@dataclass(frozen=True)
class HeadConfig:
    projector_hidden: int = 1024
    projection_dim: int = 256

    def __post_init__(self):
        if self.projector_hidden < 1 or self.projection_dim < 1:
            raise ConfigError("head dims must be >= 1")

    @property
    def predictor_hidden(self) -> int:
        return self.projection_dim


# ----------------------------------------------------------------------------
# initialization


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_linear(prefix: str, fan_in: int, fan_out: int, rng) -> dict:
    return {
        f"{prefix}.W": Tensor(xavier_uniform(rng, fan_in, fan_out), requires_grad=True,
                              name=f"{prefix}.W"),
        f"{prefix}.b": Tensor(np.zeros(fan_out), requires_grad=True, name=f"{prefix}.b"),
    }


def init_mlp(prefix: str, in_dim: int, hidden: int, out_dim: int, rng) -> dict:
    params = init_linear(f"{prefix}.0", in_dim, hidden, rng)
    params.update(init_linear(f"{prefix}.1", hidden, out_dim, rng))
    return params


def init_encoder(in_dim: int, cfg: EncoderConfig, rng, prefix: str = "encoder") -> dict:
    params = {}
    dims = [in_dim] + [cfg.hidden_dim] * (cfg.layer_count - 1) + [cfg.embedding_dim]
    for k in range(cfg.layer_count):
        if cfg.kind == "gcn":
            params.update(init_linear(f"{prefix}.{k}", dims[k], dims[k + 1], rng))
        else:
            params.update(init_mlp(f"{prefix}.{k}", dims[k], dims[k + 1], dims[k + 1], rng))
    return params


# ----------------------------------------------------------------------------
# batching


def propagation_operator(g: Graph, kind: str) -> np.ndarray:
    """Per-graph neighbourhood operator applied at every layer.

    GCN: ``D^-1/2 (A + I) D^-1/2``; GIN (eps = 0): ``A + I``.
    """
    adj = g.adjacency()
    a_hat = adj + np.eye(g.node_count)
    if kind == "gin":
        return a_hat
    deg = a_hat.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return inv_sqrt[:, None] * a_hat * inv_sqrt[None, :]


@dataclass
class GraphBatch:
    """Several graphs packed into one block-diagonal system."""

    operator: np.ndarray  # [N, N]
    features: np.ndarray  # [N, F]
    pool: np.ndarray  # [B, N], sums node rows per graph

    @property
    def size(self) -> int:
        return self.pool.shape[0]


def _as_graph(item) -> Graph:
    return item.graph if isinstance(item, View) else item


def make_batch(items: Sequence, kind: str, operators: Sequence[np.ndarray] = None) -> GraphBatch:
    graphs = [_as_graph(it) for it in items]
    if operators is None:
        operators = [propagation_operator(g, kind) for g in graphs]
    sizes = [g.node_count for g in graphs]
    pool = np.zeros((len(graphs), int(np.sum(sizes))))
    start = 0
    for i, n in enumerate(sizes):
        pool[i, start:start + n] = 1.0
        start += n
    return GraphBatch(block_diag(*operators), np.vstack([g.node_features for g in graphs]), pool)


# ----------------------------------------------------------------------------
# forward passes


def linear(x: Tensor, params: dict, prefix: str) -> Tensor:
    W = params[f"{prefix}.W"]
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"{prefix}: input dim {x.shape[-1]} != expected {W.shape[0]}")
    return x @ W + params[f"{prefix}.b"]


def mlp2(x: Tensor, params: dict, prefix: str) -> Tensor:
    """Linear -> ReLU -> Linear."""
    return linear(tt.relu(linear(x, params, f"{prefix}.0")), params, f"{prefix}.1")


def encode(graphs: Union[GraphBatch, View, Graph, Sequence], params: dict, cfg: EncoderConfig,
           prefix: str = "encoder") -> Tensor:
    """Graph embeddings ``[B, embedding_dim]`` via message passing and sum readout."""
    if isinstance(graphs, (View, Graph)):
        graphs = [graphs]
    batch = graphs if isinstance(graphs, GraphBatch) else make_batch(graphs, cfg.kind)
    first = params[f"{prefix}.0.W" if cfg.kind == "gcn" else f"{prefix}.0.0.W"]
    if batch.features.shape[1] != first.shape[0]:
        raise ShapeError(
            f"node feature dim {batch.features.shape[1]} != encoder input dim {first.shape[0]}"
        )
    op = Tensor(batch.operator)
    h = Tensor(batch.features)
    for k in range(cfg.layer_count):
        if cfg.kind == "gcn":
            h = linear(op @ h, params, f"{prefix}.{k}")
        else:
            h = mlp2(op @ h, params, f"{prefix}.{k}")
        if cfg.final_relu or k < cfg.layer_count - 1:
            h = tt.relu(h)
    return Tensor(batch.pool) @ h


def project(embedding: Tensor, params: dict, prefix: str = "projector") -> Tensor:
    return mlp2(embedding, params, prefix)


def predict(z: Tensor, params: dict, prefix: str = "predictor") -> Tensor:
    return mlp2(z, params, prefix)


def classify(embedding: Tensor, params: dict, prefix: str = "classifier") -> Tensor:
    return linear(embedding, params, prefix)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or logits.shape[0] != len(labels):
        raise ShapeError("cross_entropy: one logit row per label required")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return tt.sum(tt.log_softmax_rows(logits) * Tensor(onehot)) * (-1.0 / len(labels))
