"""Contrastive objectives built on the pairwise consistency matrix."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as tt
from .errors import ConfigError
from .gnn import cross_entropy
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    w: float = 1.0
    w_prime: float = 0.0
    temperature: float = 1.0

    def __post_init__(self):
        for name in ("w", "w_prime"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be finite and >= 0")
        if not np.isfinite(self.temperature) or self.temperature <= 0:
            raise ConfigError("temperature must be > 0")


def unsup_loss(L: Tensor, temperature: float = 1.0, literal_sign: bool = False) -> Tensor:
    """InfoNCE over a consistency matrix, positives on the diagonal.

    Logits are ``-L / temperature`` so that small positive-pair distance is
    rewarded. ``literal_sign=True`` uses ``+L`` instead.
    """
    B = L.shape[0]
    if L.data.ndim != 2 or L.shape[1] != B:
        raise ConfigError("consistency matrix must be square")
    if B < 2:
        raise ConfigError("InfoNCE needs at least 2 graphs per batch (1 negative)")
    scale = (1.0 if literal_sign else -1.0) / temperature
    logp = tt.log_softmax_rows(L * scale)
    return tt.sum(logp * Tensor(np.eye(B))) * (-1.0 / B)


def supcon_weights(labels, k: int = 1) -> np.ndarray:
    """Coefficient matrix ``M[i, j] = [i != j][y_i == y_j] / (k * N_{y_i})``."""
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    counts = same.sum(axis=1)
    M = same & ~np.eye(len(labels), dtype=bool)
    lonely = ~M.any(axis=1)
    if lonely.any():
        log.warning("%d anchor(s) without a same-label partner contribute 0", int(lonely.sum()))
    return M / (k * counts[:, None])


def sup_con_loss(L: Tensor, labels, k: int = 1) -> Tensor:
    """Supervised contrastive loss: class-normalized consistency over same-label pairs."""
    labels = np.asarray(labels)
    if len(labels) != L.shape[0]:
        raise ConfigError("one label per batch row required")
    return tt.sum(L * Tensor(supcon_weights(labels, k)))


@dataclass
class SemiLoss:
    total: Tensor
    ce: float
    unsup: float
    supcon: float

    def breakdown(self) -> dict:
        return {"loss": self.total.item(), "ce": self.ce, "unsup": self.unsup,
                "supcon": self.supcon}


def semi_loss(logits: Tensor, labels, L_all, L_labeled: Optional[Tensor],
              weights: LossWeights, k: int = 1, literal_sign: bool = False,
              supcon_labels=None) -> SemiLoss:
    """Cross-entropy on labeled graphs + w * InfoNCE on all + w' * SupCon on labeled.

    ``L_all`` may be a list with one matrix per augmented view; the InfoNCE
    term is then their mean. ``supcon_labels`` defaults to ``labels`` and must
    match the rows of ``L_labeled`` when views are stacked. Terms with zero
    weight are skipped entirely (their matrices may be None).
    """
    ce = cross_entropy(logits, labels)
    total = ce
    unsup_val = supcon_val = 0.0
    if weights.w > 0:
        mats = L_all if isinstance(L_all, (list, tuple)) else [L_all]
        u = unsup_loss(mats[0], weights.temperature, literal_sign)
        for L in mats[1:]:
            u = u + unsup_loss(L, weights.temperature, literal_sign)
        if len(mats) > 1:
            u = u * (1.0 / len(mats))
        unsup_val = u.item()
        total = total + u * weights.w
    if weights.w_prime > 0:
        s = sup_con_loss(L_labeled, labels if supcon_labels is None else supcon_labels, k)
        supcon_val = s.item()
        total = total + s * weights.w_prime
    return SemiLoss(total, ce.item(), unsup_val, supcon_val)
