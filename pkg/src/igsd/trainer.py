"""Training loops: unsupervised distillation, semi-supervised joint training, self-training."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import distill, gnn, objectives
from . import tensor as tt
from .augment import DiffusionConfig, ViewKind, make_views
from .errors import ConfigError, SamplerError
from .graph_core import GraphDataset, batch_iter
from .tensor import Adam

log = logging.getLogger(__name__)

# tags keeping the derived random streams apart
_BATCHES, _LABELED, _EDGE_DROP = 1, 2, 3


def derive_seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


@dataclass(frozen=True)
class SelfTrainConfig:
    enabled: bool = False
    start_epoch: int = 30
    iterations: int = 20
    threshold: float = 0.95

    def __post_init__(self):
        if self.start_epoch < 0:
            raise ConfigError("self_train.start_epoch must be >= 0")
        if self.iterations < 0:
            raise ConfigError("self_train.iterations must be >= 0")
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigError("self_train.threshold must lie in (0, 1]")


@dataclass(frozen=True)
class RunConfig:
    """Every hyperparameter of a training run. Round-trips through :meth:`to_dict`."""

    encoder: str = "gcn"
    layers: int = 2
    hidden_dim: int = 64
    embedding_dim: int = 64
    projector_hidden: int = 1024
    projection_dim: int = 256
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    tau: float = 0.99
    mixup_lambda: float = 0.5
    w: float = 1.0
    w_prime: float = 0.0
    temperature: float = 1.0
    literal_sign: bool = False
    k_views: int = 1
    augment: str = "diffuse"
    alpha: float = 0.2
    epsilon: float = 1e-4
    drop_prob: float = 0.2
    seed: int = 0
    checkpoint_every: int = 0
    self_train: SelfTrainConfig = field(default_factory=SelfTrainConfig)

    def __post_init__(self):
        if isinstance(self.self_train, dict):
            object.__setattr__(self, "self_train", _from_mapping(SelfTrainConfig, self.self_train,
                                                                 "self_train."))
        self.encoder_config()
        self.head_config()
        self.diffusion_config()
        self.loss_weights()
        checks = [
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.batch_size >= 2, "batch_size must be >= 2"),
            (np.isfinite(self.learning_rate) and self.learning_rate >= 0, "learning_rate must be >= 0"),
            (0.0 <= self.tau <= 1.0, "tau must lie in [0, 1]"),
            (0.0 <= self.mixup_lambda <= 1.0, "mixup_lambda must lie in [0, 1]"),
            (self.k_views >= 1, "k_views must be >= 1"),
            (self.augment in {k.value for k in ViewKind}, f"unknown augment {self.augment!r}"),
            (0.0 <= self.drop_prob < 1.0, "drop_prob must lie in [0, 1)"),
            (self.seed >= 0, "seed must be >= 0"),
            (self.checkpoint_every >= 0, "checkpoint_every must be >= 0"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        st = self.self_train
        if st.enabled and st.start_epoch > self.epochs:
            raise ConfigError(f"self_train.start_epoch {st.start_epoch} exceeds epochs {self.epochs}")

    def encoder_config(self) -> gnn.EncoderConfig:
        return gnn.EncoderConfig(self.encoder, self.layers, self.hidden_dim, self.embedding_dim)

    def head_config(self) -> gnn.HeadConfig:
        return gnn.HeadConfig(self.projector_hidden, self.projection_dim)

    def diffusion_config(self) -> DiffusionConfig:
        return DiffusionConfig(self.alpha, self.epsilon)

    def loss_weights(self) -> objectives.LossWeights:
        return objectives.LossWeights(self.w, self.w_prime, self.temperature)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _from_mapping(cls, data)


def _from_mapping(cls, data: dict, prefix: str = ""):
    """Build a config dataclass, rejecting unknown keys and mistyped values."""
    known = {f.name: f for f in dataclasses.fields(cls)}
    defaults = cls()
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key '{prefix}{key}'")
        default = getattr(defaults, key)
        if dataclasses.is_dataclass(default):
            if isinstance(value, dict):
                value = _from_mapping(type(default), value, f"{prefix}{key}.")
            elif not isinstance(value, type(default)):
                raise ConfigError(f"{prefix}{key} must be a mapping")
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{prefix}{key} must be a boolean, got {value!r}")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{prefix}{key} must be an integer, got {value!r}")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{prefix}{key} must be a number, got {value!r}")
            value = float(value)
        elif isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"{prefix}{key} must be a string, got {value!r}")
        kwargs[key] = value
    return cls(**kwargs)


# ----------------------------------------------------------------------------
# bookkeeping


@dataclass
class PseudoLabelSet:
    """Pseudo-labels keyed by graph index: ``index -> (class, confidence, iteration)``."""

    entries: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, index):
        return index in self.entries

    def indices(self) -> np.ndarray:
        return np.array(sorted(self.entries), dtype=np.int64)

    def labels(self) -> np.ndarray:
        return np.array([self.entries[i][0] for i in sorted(self.entries)], dtype=np.int64)

    def merge(self, newer: "PseudoLabelSet") -> "PseudoLabelSet":
        """Union; an existing label is replaced only by a more confident one."""
        out = dict(self.entries)
        for i, entry in newer.entries.items():
            if i not in out or entry[1] > out[i][1]:
                out[i] = entry
        return PseudoLabelSet(out)

    def accuracy(self, truth) -> Optional[float]:
        if not self.entries:
            return None
        truth = np.asarray(truth)
        return float(np.mean(truth[self.indices()] == self.labels()))


@dataclass
class TrainResult:
    state: distill.ModelState
    metrics: list
    pseudo_labels: Optional[PseudoLabelSet] = None

    def final(self, key: str):
        return self.metrics[-1][key]

    def best(self, key: str):
        values = [m[key] for m in self.metrics if m.get(key) is not None]
        return max(values) if values else None


class MetricsLog:
    """Per-epoch records, mirrored to a JSON-lines file when a path is given."""

    def __init__(self, path=None):
        self.records = []
        self.path = None if path is None else Path(path)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def append(self, record: dict) -> None:
        self.records.append(record)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record) + "\n")


def _finish_epoch(state, cfg, out_dir, epoch, final=False):
    if out_dir is None:
        return
    if final or (cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0):
        name = "checkpoint.npz" if final else f"checkpoint_epoch{epoch}.npz"
        state.save(Path(out_dir) / name, {"epoch": epoch, "config": cfg.to_dict()})


# ----------------------------------------------------------------------------
# views and batches


class ViewSource:
    """Original graphs and their augmented views, caching propagation operators.

    Diffusion and identity views are fixed per graph and computed once;
    edge-drop views are redrawn from a seed derived from (epoch, step, graph).
    """

    def __init__(self, ds: GraphDataset, cfg: RunConfig):
        self.ds = ds
        self.cfg = cfg
        self.kind = cfg.encoder
        self.static = cfg.augment != ViewKind.EDGE_DROPPED.value
        self._ops = {}
        self._views = {}

    def _op(self, i):
        if i not in self._ops:
            self._ops[i] = gnn.propagation_operator(self.ds[i], self.kind)
        return self._ops[i]

    def original(self, idx) -> gnn.GraphBatch:
        return gnn.make_batch([self.ds[i] for i in idx], self.kind, [self._op(i) for i in idx])

    def _augment(self, i, epoch, step, stream):
        cfg = self.cfg
        if self.static:
            if i not in self._views:
                view = make_views(self.ds[i], 1, cfg.augment, cfg.diffusion_config(), origin_index=i)[0]
                self._views[i] = (view, gnn.propagation_operator(view.graph, self.kind))
            return [self._views[i]] * cfg.k_views
        seed = derive_seed(cfg.seed, _EDGE_DROP, stream, epoch, step, i)
        views = make_views(self.ds[i], cfg.k_views, cfg.augment, seed=seed,
                           drop_prob=cfg.drop_prob, origin_index=i)
        return [(v, gnn.propagation_operator(v.graph, self.kind)) for v in views]

    def augmented(self, idx, epoch=0, step=0, stream=0) -> list:
        """One batch per augmentation ``k`` in ``range(k_views)``."""
        per_graph = [self._augment(i, epoch, step, stream) for i in idx]
        return [gnn.make_batch([pg[k][0] for pg in per_graph], self.kind,
                               [pg[k][1] for pg in per_graph])
                for k in range(self.cfg.k_views)]

    def latents(self, state, idx, epoch=0, step=0, stream=0) -> list:
        v = self.original(idx)
        return [distill.forward_pair(v, vp, state) for vp in self.augmented(idx, epoch, step, stream)]


def epoch_batches(n: int, batch_size: int, seed: int) -> list:
    """Shuffled batches; a trailing singleton joins the previous batch (InfoNCE needs 2)."""
    batches = list(batch_iter(np.arange(n), batch_size, seed))
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2:] = [np.concatenate(batches[-2:])]
    return batches


class BalancedSampler:
    """Labeled batches with an equal share per class, so SupCon always has positives."""

    def __init__(self, indices, labels, batch_size: int, need_pairs: bool = False):
        indices = np.asarray(indices, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        if len(indices) == 0:
            raise SamplerError("no labeled graphs to sample from")
        classes = np.unique(labels)
        self.groups = [(c, indices[labels == c]) for c in classes]
        if need_pairs and not any(len(g) >= 2 for _, g in self.groups):
            raise SamplerError("supervised contrastive term needs two labeled graphs of one class")
        self.per_class = max(2, batch_size // len(classes))

    def draw(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        idx, lab = [], []
        for c, members in self.groups:
            take = rng.choice(members, size=min(self.per_class, len(members)), replace=False)
            idx.append(take)
            lab.append(np.full(len(take), c))
        return np.concatenate(idx), np.concatenate(lab)


def _step(state: distill.ModelState, loss_fn, ema: bool = True):
    state.optimizer.zero_grad()
    with tt.Tape():
        out = loss_fn()
        tt.backward(out if isinstance(out, tt.Tensor) else out.total)
    state.optimizer.step()
    if ema:
        distill.ema_update(state)
    return out


# ----------------------------------------------------------------------------
# unsupervised


def train_unsupervised(ds: GraphDataset, cfg: RunConfig, state: Optional[distill.ModelState] = None,
                       out_dir=None) -> TrainResult:
    """Self-distillation with the InfoNCE-over-consistency objective; labels are never read."""
    ds = ds.without_labels()
    if len(ds) < 2:
        raise ConfigError("unsupervised training needs at least 2 graphs")
    if state is None:
        state = distill.init_state(ds.feature_dim, cfg.encoder_config(), cfg.head_config(),
                                   seed=cfg.seed, tau=cfg.tau)
    state.optimizer = Adam(state.student_params(("encoder", "projector", "predictor")),
                           lr=cfg.learning_rate)
    state.step = 0
    src = ViewSource(ds, cfg)
    metrics = MetricsLog(None if out_dir is None else Path(out_dir) / "metrics.jsonl")

    def loss_for(idx, epoch, step):
        mats = [distill.consistency_matrix(lat) for lat in src.latents(state, idx, epoch, step)]
        loss = objectives.unsup_loss(mats[0], cfg.temperature, cfg.literal_sign)
        for L in mats[1:]:
            loss = loss + objectives.unsup_loss(L, cfg.temperature, cfg.literal_sign)
        return loss * (1.0 / len(mats)) if len(mats) > 1 else loss

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for step, idx in enumerate(epoch_batches(len(ds), cfg.batch_size,
                                                 derive_seed(cfg.seed, _BATCHES, epoch))):
            losses.append(_step(state, lambda: loss_for(idx, epoch, step)).item())
        metrics.append({"epoch": epoch, "loss": float(np.mean(losses)),
                        "wall_time": time.perf_counter() - t0})
        log.info("epoch %d loss %.5f", epoch, metrics.records[-1]["loss"])
        _finish_epoch(state, cfg, out_dir, epoch)
    _finish_epoch(state, cfg, out_dir, cfg.epochs, final=True)
    return TrainResult(state, metrics.records)


# ----------------------------------------------------------------------------
# semi-supervised


def class_probabilities(state: distill.ModelState, ds: GraphDataset, indices,
                        chunk: int = 256) -> np.ndarray:
    """Softmax of the student classifier on un-augmented graphs."""
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((len(indices), state.num_classes))
    with tt.no_grad():
        for start in range(0, len(indices), chunk):
            part = indices[start:start + chunk]
            emb = gnn.encode([ds[i] for i in part], state.student, state.encoder_cfg)
            out[start:start + len(part)] = tt.softmax_rows(gnn.classify(emb, state.student)).data
    return out


def self_train_round(state: distill.ModelState, ds: GraphDataset, pool, threshold: float,
                     iteration: int = 0) -> PseudoLabelSet:
    """Pseudo-label every pool graph whose top class probability reaches ``threshold``."""
    pool = np.asarray(pool, dtype=np.int64)
    if len(pool) == 0:
        return PseudoLabelSet()
    probs = class_probabilities(state, ds, pool)
    cls = np.argmax(probs, axis=1)  # first maximum, i.e. lowest class index on ties
    conf = probs[np.arange(len(pool)), cls]
    keep = conf >= threshold
    return PseudoLabelSet({int(i): (int(c), float(p), iteration)
                           for i, c, p in zip(pool[keep], cls[keep], conf[keep])})


def round_epochs(cfg: RunConfig) -> list:
    """Epochs before which a pseudo-labeling round runs, spread after ``start_epoch``."""
    st = cfg.self_train
    if not st.enabled or st.iterations == 0:
        return []
    remaining = cfg.epochs - st.start_epoch
    if remaining <= 0:
        log.warning("self-training starts after the last epoch; no rounds run")
        return []
    return sorted({st.start_epoch + 1 + (r * remaining) // st.iterations
                   for r in range(st.iterations)})


def _accuracy(state, ds, indices) -> Optional[float]:
    if len(indices) == 0:
        return None
    pred = np.argmax(class_probabilities(state, ds, indices), axis=1)
    return float(np.mean(pred == ds.labels[indices]))


def _check_split(ds, labeled, unlabeled):
    if len(np.intersect1d(labeled, unlabeled)):
        raise ConfigError("labeled and unlabeled indices overlap")
    if np.any(ds.labels[labeled] < 0):
        raise ConfigError("labeled split contains graphs without a label")


def train_semi(ds: GraphDataset, split, cfg: RunConfig, state: Optional[distill.ModelState] = None,
               out_dir=None, eval_indices=None) -> TrainResult:
    """Cross-entropy on labeled graphs plus weighted InfoNCE (all graphs) and SupCon (labeled).

    When ``cfg.self_train.enabled``, pseudo-labeling rounds run between
    epochs after ``start_epoch``; pseudo-labeled graphs join both the
    cross-entropy and the supervised contrastive terms. Labels of graphs
    outside the labeled split are read only for the ``test_acc`` and
    ``pseudo_acc`` metrics, computed on ``eval_indices`` (default: the
    unlabeled pool).
    """
    labeled, unlabeled = (np.asarray(a, dtype=np.int64) for a in split)
    _check_split(ds, labeled, unlabeled)
    st = cfg.self_train
    if st.enabled and st.threshold <= 1.0 / ds.num_classes:
        raise ConfigError(f"threshold must exceed 1/num_classes = {1.0 / ds.num_classes:.3f}")
    weights = cfg.loss_weights()
    if state is None:
        state = distill.init_state(ds.feature_dim, cfg.encoder_config(), cfg.head_config(),
                                   num_classes=ds.num_classes, seed=cfg.seed, tau=cfg.tau)
    state.optimizer = Adam(state.student_params(), lr=cfg.learning_rate)
    state.step = 0
    src = ViewSource(ds, cfg)
    truth = ds.labels
    eval_idx = unlabeled if eval_indices is None else np.asarray(eval_indices, dtype=np.int64)
    rounds = set(round_epochs(cfg))
    sampler_rng = np.random.default_rng(derive_seed(cfg.seed, _LABELED))
    pseudo = PseudoLabelSet()
    metrics = MetricsLog(None if out_dir is None else Path(out_dir) / "metrics.jsonl")
    K = cfg.k_views

    def loss_for(unsup_idx, lab_idx, lab_y, epoch, step):
        L_all = L_lab = sup_y = None
        if weights.w > 0:
            L_all = [distill.consistency_matrix(lat)
                     for lat in src.latents(state, unsup_idx, epoch, step, stream=0)]
        if weights.w_prime > 0:
            lats = src.latents(state, lab_idx, epoch, step, stream=1)
            emb = lats[0].embedding
            L_lab = distill.consistency_matrix(distill.stack_latents(lats))
            sup_y = np.tile(lab_y, K)
        else:
            emb = gnn.encode(src.original(lab_idx), state.student, state.encoder_cfg)
        logits = gnn.classify(emb, state.student)
        return objectives.semi_loss(logits, lab_y, L_all, L_lab, weights, k=K,
                                    literal_sign=cfg.literal_sign, supcon_labels=sup_y)

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        if epoch in rounds:
            pseudo = pseudo.merge(self_train_round(state, ds, unlabeled, st.threshold, epoch))
        pool_idx = np.concatenate([labeled, pseudo.indices()])
        pool_y = np.concatenate([truth[labeled], pseudo.labels()])
        sampler = BalancedSampler(pool_idx, pool_y, cfg.batch_size, need_pairs=weights.w_prime > 0)
        parts = []
        for step, idx in enumerate(epoch_batches(len(ds), cfg.batch_size,
                                                 derive_seed(cfg.seed, _BATCHES, epoch))):
            lab_idx, lab_y = sampler.draw(sampler_rng)
            out = _step(state, lambda: loss_for(idx, lab_idx, lab_y, epoch, step))
            parts.append(out.breakdown())
        record = {"epoch": epoch}
        record.update({k: float(np.mean([p[k] for p in parts])) for k in parts[0]})
        record.update({
            "labeled": int(len(pool_idx)),
            "pseudo_labels": len(pseudo),
            "pseudo_acc": pseudo.accuracy(truth),
            "test_acc": _accuracy(state, ds, eval_idx),
            "wall_time": time.perf_counter() - t0,
        })
        metrics.append(record)
        log.info("epoch %d loss %.5f test_acc %s", epoch, record["loss"], record["test_acc"])
        _finish_epoch(state, cfg, out_dir, epoch)
    _finish_epoch(state, cfg, out_dir, cfg.epochs, final=True)
    return TrainResult(state, metrics.records, pseudo)


def run_self_training(ds: GraphDataset, split, cfg: RunConfig, state=None, out_dir=None,
                      eval_indices=None) -> TrainResult:
    """Semi-supervised training with pseudo-labeling rounds after ``start_epoch``."""
    if not cfg.self_train.enabled:
        raise ConfigError("run_self_training requires self_train.enabled")
    return train_semi(ds, split, cfg, state, out_dir, eval_indices)


def train_supervised(ds: GraphDataset, split, cfg: RunConfig, out_dir=None,
                     eval_indices=None) -> TrainResult:
    """Cross-entropy baseline on the labeled split: encoder and classifier only, no teacher."""
    labeled, unlabeled = (np.asarray(a, dtype=np.int64) for a in split)
    _check_split(ds, labeled, unlabeled)
    state = distill.init_state(ds.feature_dim, cfg.encoder_config(), cfg.head_config(),
                               num_classes=ds.num_classes, seed=cfg.seed, tau=cfg.tau)
    state.optimizer = Adam(state.student_params(("encoder", "classifier")), lr=cfg.learning_rate)
    eval_idx = unlabeled if eval_indices is None else np.asarray(eval_indices, dtype=np.int64)
    sampler = BalancedSampler(labeled, ds.labels[labeled], cfg.batch_size)
    sampler_rng = np.random.default_rng(derive_seed(cfg.seed, _LABELED))
    metrics = MetricsLog(None if out_dir is None else Path(out_dir) / "metrics.jsonl")

    def loss_for(lab_idx, lab_y):
        emb = gnn.encode([ds[i] for i in lab_idx], state.student, state.encoder_cfg)
        return gnn.cross_entropy(gnn.classify(emb, state.student), lab_y)

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        steps = len(epoch_batches(len(ds), cfg.batch_size, derive_seed(cfg.seed, _BATCHES, epoch)))
        losses = []
        for _ in range(steps):
            lab_idx, lab_y = sampler.draw(sampler_rng)
            losses.append(_step(state, lambda: loss_for(lab_idx, lab_y), ema=False).item())
        metrics.append({"epoch": epoch, "loss": float(np.mean(losses)), "ce": float(np.mean(losses)),
                        "test_acc": _accuracy(state, ds, eval_idx),
                        "wall_time": time.perf_counter() - t0})
        _finish_epoch(state, cfg, out_dir, epoch)
    _finish_epoch(state, cfg, out_dir, cfg.epochs, final=True)
    return TrainResult(state, metrics.records)
