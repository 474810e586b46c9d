"""Mixup embedding extraction and the k-fold linear-probe protocol."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import GridSearchCV, StratifiedKFold
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from . import gnn
from . import tensor as tt
from .distill import ModelState
from .errors import ConfigError, DegenerateError
from .graph_core import GraphDataset, make_folds

log = logging.getLogger(__name__)

C_GRID = (1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3)


@dataclass
class EmbeddingTable:
    matrix: np.ndarray
    indices: np.ndarray
    lam: float
    checkpoint_id: str = ""

    def __post_init__(self):
        if self.matrix.shape[0] != len(self.indices):
            raise ConfigError("one embedding row per graph index required")
        if not np.all(np.isfinite(self.matrix)):
            raise ConfigError("embedding table contains non-finite entries")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def save_text(self, path, dataset: str = "") -> Path:
        path = Path(path)
        header = (f"dataset={dataset} checkpoint={self.checkpoint_id or '-'} "
                  f"lambda={self.lam!r} dim={self.dim}")
        rows = np.column_stack([self.indices, self.matrix])
        fmt = ["%d"] + ["%.17g"] * self.dim
        np.savetxt(path, rows, fmt=fmt, delimiter="\t", header=header)
        return path

    @classmethod
    def load_text(cls, path) -> tuple["EmbeddingTable", str]:
        with open(path) as fh:
            header = fh.readline().lstrip("#").split()
        meta = dict(item.split("=", 1) for item in header)
        rows = np.loadtxt(path, delimiter="\t", ndmin=2)
        ckpt = "" if meta["checkpoint"] == "-" else meta["checkpoint"]
        table = cls(rows[:, 1:], rows[:, 0].astype(np.int64), float(meta["lambda"]), ckpt)
        return table, meta["dataset"]


@dataclass(frozen=True)
class ProbeConfig:
    c_grid: tuple = C_GRID
    inner_folds: int = 5
    max_iter: int = 5000
    tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.c_grid or any(c <= 0 for c in self.c_grid):
            raise ConfigError("c_grid must be non-empty with every C > 0")
        if self.inner_folds < 2:
            raise ConfigError("inner_folds must be >= 2")


@dataclass
class EvalSummary:
    mean: float
    std: float
    repeat_means: list = field(default_factory=list)
    fold_accuracies: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"accuracy_mean": self.mean, "accuracy_std": self.std,
                "repeat_means": self.repeat_means}


def encoder_embeddings(ds: GraphDataset, params: dict, cfg: gnn.EncoderConfig,
                       chunk: int = 256) -> np.ndarray:
    out = []
    with tt.no_grad():
        for start in range(0, len(ds), chunk):
            graphs = ds.graphs[start:start + chunk]
            out.append(gnn.encode(graphs, params, cfg).data)
    return np.vstack(out)


def extract_embeddings(ds: GraphDataset, state: ModelState, lam: float = 0.5,
                       checkpoint_id: str = "") -> EmbeddingTable:
    """Mix student and teacher encodings of the un-augmented graphs: ``lam*z + (1-lam)*z'``."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    z = encoder_embeddings(ds, state.student, state.encoder_cfg)
    z_teacher = encoder_embeddings(ds, state.teacher, state.encoder_cfg)
    return EmbeddingTable(lam * z + (1.0 - lam) * z_teacher, np.arange(len(ds)), lam, checkpoint_id)


def _logistic(C: float, cfg: ProbeConfig):
    return make_pipeline(StandardScaler(), LogisticRegression(C=C, tol=cfg.tol, max_iter=cfg.max_iter))


def linear_probe(train_x, train_y, test_x, cfg: ProbeConfig = ProbeConfig(),
                 test_y=None) -> tuple[np.ndarray, Optional[float]]:
    """L2 logistic regression on standardized embeddings, C chosen by inner stratified CV.

    Returns predicted test labels and, when ``test_y`` is given, the accuracy.
    """
    train_x, test_x = np.asarray(train_x, float), np.asarray(test_x, float)
    train_y = np.asarray(train_y)
    classes, counts = np.unique(train_y, return_counts=True)
    if len(classes) < 2:
        raise DegenerateError("linear probe needs at least two classes in the training fold")
    splits = min(cfg.inner_folds, int(counts.min()))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        if len(cfg.c_grid) == 1 or splits < 2:
            # too few graphs per class for inner CV: fall back to the grid midpoint
            C = cfg.c_grid[len(cfg.c_grid) // 2]
            model = _logistic(C, cfg).fit(train_x, train_y)
        else:
            search = GridSearchCV(
                _logistic(1.0, cfg), {"logisticregression__C": list(cfg.c_grid)},
                cv=StratifiedKFold(splits, shuffle=True, random_state=cfg.seed),
            )
            model = search.fit(train_x, train_y).best_estimator_
    pred = model.predict(test_x)
    acc = None if test_y is None else float(np.mean(pred == np.asarray(test_y)))
    return pred, acc


def evaluate_embeddings(x, y, folds: int = 10, repeats: int = 5, cfg: ProbeConfig = ProbeConfig(),
                        seed: int = 0) -> EvalSummary:
    """Stratified ``folds``-fold CV accuracy, repeated over ``repeats`` fold seeds."""
    x, y = np.asarray(x, float), np.asarray(y)
    repeat_means, all_folds = [], []
    for r in range(repeats):
        accs = []
        for train_idx, test_idx in make_folds(y, folds, seed=seed + r):
            _, acc = linear_probe(x[train_idx], y[train_idx], x[test_idx], cfg, y[test_idx])
            accs.append(acc)
        all_folds.append(accs)
        repeat_means.append(float(np.mean(accs)))
        log.info("repeat %d: %.4f", r, repeat_means[-1])
    return EvalSummary(float(np.mean(repeat_means)), float(np.std(repeat_means)),
                       repeat_means, all_folds)


def evaluate_unsupervised(ds: GraphDataset, state: ModelState, folds: int = 10, repeats: int = 5,
                          lam: float = 0.5, cfg: ProbeConfig = ProbeConfig(),
                          seed: int = 0) -> EvalSummary:
    if not ds.has_labels:
        raise ConfigError("evaluation needs a fully labeled dataset")
    table = extract_embeddings(ds, state, lam)
    return evaluate_embeddings(table.matrix, ds.labels, folds, repeats, cfg, seed)
