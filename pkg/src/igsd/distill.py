"""Student/teacher networks, consistency loss and the EMA teacher update."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import gnn
from . import tensor as tt
from .errors import ShapeError, StateError
from .tensor import Adam, Tensor

TEACHER_COMPONENTS = ("encoder", "projector")


@dataclass
class ModelState:
    """Parameters of both networks plus training bookkeeping.

    ``student`` holds encoder/projector/predictor (and optionally classifier)
    tensors keyed by dotted name; ``teacher`` mirrors the encoder and
    projector only and never carries gradients.
    """

    student: dict
    teacher: dict
    encoder_cfg: gnn.EncoderConfig
    head_cfg: gnn.HeadConfig
    tau: float = 0.99
    step: int = 0
    num_classes: Optional[int] = None
    optimizer: Optional[Adam] = None
    meta: dict = field(default_factory=dict)

    def student_params(self, components=None) -> list:
        if components is None:
            return list(self.student.values())
        return [p for k, p in self.student.items() if k.split(".", 1)[0] in components]

    def to_arrays(self) -> dict:
        out = {f"student/{k}": v.data for k, v in self.student.items()}
        out.update({f"teacher/{k}": v.data for k, v in self.teacher.items()})
        return out

    def save(self, path, meta: Optional[dict] = None):
        info = {
            "encoder": vars(self.encoder_cfg),
            "heads": vars(self.head_cfg),
            "tau": self.tau,
            "step": self.step,
            "num_classes": self.num_classes,
            **self.meta,
            **(meta or {}),
        }
        return tt.save_arrays(path, self.to_arrays(), info)

    @classmethod
    def load(cls, path) -> "ModelState":
        arrays, meta = tt.load_arrays(path)
        student, teacher = {}, {}
        for key, value in arrays.items():
            side, name = key.split("/", 1)
            if side == "student":
                student[name] = Tensor(value, requires_grad=True, name=name)
            elif side == "teacher":
                teacher[name] = Tensor(value, name=name)
        enc = gnn.EncoderConfig(**meta.pop("encoder"))
        heads = gnn.HeadConfig(**meta.pop("heads"))
        return cls(student, teacher, enc, heads, tau=meta.pop("tau"), step=meta.pop("step"),
                   num_classes=meta.pop("num_classes"), meta=meta)


def _component_rng(seed: int, component: str) -> np.random.Generator:
    # independent stream per component so optional heads never shift the others
    tag = [ord(c) for c in component]
    return np.random.default_rng([seed, *tag])


def init_state(feature_dim: int, encoder_cfg=gnn.EncoderConfig(), head_cfg=gnn.HeadConfig(),
               num_classes: Optional[int] = None, seed: int = 0, tau: float = 0.99) -> ModelState:
    """Fresh student with Xavier weights; the teacher starts as an exact copy."""
    student = gnn.init_encoder(feature_dim, encoder_cfg, _component_rng(seed, "encoder"))
    student.update(gnn.init_mlp("projector", encoder_cfg.embedding_dim, head_cfg.projector_hidden,
                                head_cfg.projection_dim, _component_rng(seed, "projector")))
    student.update(gnn.init_mlp("predictor", head_cfg.projection_dim, head_cfg.predictor_hidden,
                                head_cfg.projection_dim, _component_rng(seed, "predictor")))
    if num_classes:
        student.update(gnn.init_linear("classifier", encoder_cfg.embedding_dim, num_classes,
                                       _component_rng(seed, "classifier")))
    teacher = {
        k: Tensor(v.data.copy(), name=k)
        for k, v in student.items()
        if k.split(".", 1)[0] in TEACHER_COMPONENTS
    }
    return ModelState(student, teacher, encoder_cfg, head_cfg, tau=tau, num_classes=num_classes)


def ema_update(state: ModelState) -> None:
    """teacher <- tau * teacher + (1 - tau) * student, once per optimizer step."""
    if state.optimizer is not None and state.optimizer.t != state.step + 1:
        raise StateError(
            f"EMA update out of order: optimizer at step {state.optimizer.t}, teacher at {state.step}"
        )
    tau = state.tau
    for name, target in state.teacher.items():
        source = state.student.get(name)
        if source is None or source.shape != target.shape:
            raise StateError(f"teacher parameter {name} has no matching student parameter")
        target.data *= tau
        target.data += (1.0 - tau) * source.data
    state.step += 1


@dataclass
class PairLatents:
    """L2-normalized latents for a batch of (v, v') pairs.

    ``pred``/``pred_prime``: student predictions on v / v' (differentiable).
    ``target``/``target_prime``: teacher projections on v / v' (constants).
    ``embedding``: student encoder output on v, used by the classifier head.
    """

    pred: Tensor
    pred_prime: Tensor
    target: Tensor
    target_prime: Tensor
    embedding: Optional[Tensor] = None

    def __len__(self):
        return self.pred.shape[0]

    def rows(self, index) -> "PairLatents":
        emb = None if self.embedding is None else tt.take_rows(self.embedding, index)
        return PairLatents(tt.take_rows(self.pred, index), tt.take_rows(self.pred_prime, index),
                           tt.take_rows(self.target, index), tt.take_rows(self.target_prime, index),
                           emb)


def student_forward(batch, state: ModelState):
    emb = gnn.encode(batch, state.student, state.encoder_cfg)
    return emb, gnn.predict(gnn.project(emb, state.student), state.student)


def teacher_forward(batch, state: ModelState) -> Tensor:
    with tt.no_grad():
        emb = gnn.encode(batch, state.teacher, state.encoder_cfg)
        return gnn.project(emb, state.teacher)


def forward_pair(v, v_prime, state: ModelState) -> PairLatents:
    """Run both networks on the original and augmented views.

    ``v`` and ``v_prime`` are anything :func:`gnn.encode` accepts (a view,
    a list of views, or a prebuilt :class:`gnn.GraphBatch`).
    """
    emb, pred = student_forward(v, state)
    _, pred_prime = student_forward(v_prime, state)
    target = teacher_forward(v, state)
    target_prime = teacher_forward(v_prime, state)
    with tt.no_grad():
        target = tt.l2_normalize_rows(target)
        target_prime = tt.l2_normalize_rows(target_prime)
    return PairLatents(tt.l2_normalize_rows(pred), tt.l2_normalize_rows(pred_prime),
                       target, target_prime, emb)


def consistency_loss(a: PairLatents, b: PairLatents) -> Tensor:
    """Symmetric squared distance between graph ``a``'s predictions and graph ``b``'s targets.

    Both arguments are single-row latents (already normalized).
    """
    if a.pred.shape[-1] != b.target_prime.shape[-1]:
        raise ShapeError("consistency_loss: projection dims differ")
    d1 = a.pred - b.target_prime
    d2 = a.pred_prime - b.target
    return tt.sum(d1 * d1) + tt.sum(d2 * d2)


def consistency_matrix(lat: PairLatents) -> Tensor:
    """``L[i, j] = consistency_loss(lat[i], lat[j])`` for the whole batch.

    Uses ``|a - b|^2 = 2 - 2 a.b`` for unit vectors.
    """
    cross = lat.pred @ lat.target_prime.T + lat.pred_prime @ lat.target.T
    return cross * (-2.0) + 4.0


def stack_latents(parts) -> PairLatents:
    """Row-wise concatenation of several :class:`PairLatents` (one per view)."""
    parts = list(parts)
    if len(parts) == 1:
        return parts[0]
    fields = ("pred", "pred_prime", "target", "target_prime")
    cols = [tt.concat([getattr(p, f) for p in parts]) for f in fields]
    emb = None
    if all(p.embedding is not None for p in parts):
        emb = tt.concat([p.embedding for p in parts])
    return PairLatents(*cols, emb)
