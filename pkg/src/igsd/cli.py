"""Command-line entry point: ``igsd <command> [--config FILE] [flags]``.

Every flag has a config-file key of the same name with dashes replaced by
underscores. Precedence: built-in defaults, then the file, then flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import evaluate, plotting, trainer
from .distill import ModelState
from .errors import ConfigError, IGSDError
from .graph_core import GraphDataset, SplitSpec, parse_tu_dataset, split_semi
from .synthetic import planted_dataset
from .trainer import RunConfig

log = logging.getLogger("igsd")

COMMANDS = ("train-unsup", "train-semi", "self-train", "embed", "eval", "sweep")

# flat key -> (type, dotted RunConfig field)
RUN_KEYS = {
    "encoder": (str, "encoder"),
    "layers": (int, "layers"),
    "hidden_dim": (int, "hidden_dim"),
    "embedding_dim": (int, "embedding_dim"),
    "projector_hidden": (int, "projector_hidden"),
    "projection_dim": (int, "projection_dim"),
    "epochs": (int, "epochs"),
    "batch_size": (int, "batch_size"),
    "lr": (float, "learning_rate"),
    "tau": (float, "tau"),
    "lambda": (float, "mixup_lambda"),
    "w": (float, "w"),
    "w_prime": (float, "w_prime"),
    "temperature": (float, "temperature"),
    "literal_sign": (bool, "literal_sign"),
    "k_views": (int, "k_views"),
    "augment": (str, "augment"),
    "alpha": (float, "alpha"),
    "epsilon": (float, "epsilon"),
    "drop_prob": (float, "drop_prob"),
    "checkpoint_every": (int, "checkpoint_every"),
    "self_train": (bool, "self_train.enabled"),
    "st_start_epoch": (int, "self_train.start_epoch"),
    "st_iterations": (int, "self_train.iterations"),
    "st_threshold": (float, "self_train.threshold"),
}

# flat key -> type for experiment-level settings (defaults live on ExperimentSpec)
SPEC_KEYS = {
    "command": str,
    "dataset": str,
    "data_dir": str,
    "out": str,
    "seeds": list,
    "checkpoint": str,
    "folds": int,
    "repeats": int,
    "batch_sizes": list,
    "labeled_fraction": float,
    "max_degree": int,
    "jobs": int,
}


@dataclass
class ExperimentSpec:
    command: str
    run: RunConfig = field(default_factory=RunConfig)
    dataset: str = "MUTAG"
    data_dir: str = "data"
    out: str = "runs/latest"
    seeds: list = field(default_factory=lambda: [0])
    checkpoint: Optional[str] = None
    folds: int = 10
    repeats: int = 5
    batch_sizes: list = field(default_factory=lambda: [16, 32, 64, 128])
    labeled_fraction: float = 0.05
    max_degree: int = 64
    jobs: int = 1

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative integers")
        if not self.batch_sizes or any(not isinstance(b, int) or b < 2 for b in self.batch_sizes):
            raise ConfigError("batch_sizes must be integers >= 2")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def to_flat(self) -> dict:
        """Flat key-value form, loadable again with :func:`load_config`."""
        flat = {"command": self.command}
        for key, (_, path) in RUN_KEYS.items():
            obj = self.run
            for part in path.split("."):
                obj = getattr(obj, part)
            flat[key] = obj
        for key in SPEC_KEYS:
            if key != "command":
                flat[key] = getattr(self, key)
        return flat


def _check_type(key, value, kind):
    if kind is bool:
        ok = isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif kind is list:
        ok = isinstance(value, list)
    else:
        ok = value is None or isinstance(value, kind)
    if not ok:
        raise ConfigError(f"config key '{key}' expects {kind.__name__}, got {value!r}")


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a key-value mapping")
    return data


def resolve(command: str, file_values: dict, flag_values: dict) -> ExperimentSpec:
    merged = dict(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    for key in merged:
        if key not in RUN_KEYS and key not in SPEC_KEYS:
            raise ConfigError(f"unknown config key '{key}'")
    if merged.get("command", command) != command:
        raise ConfigError(f"config is for command {merged['command']!r}, not {command!r}")
    run, spec = {}, {}
    for key, value in merged.items():
        if key in RUN_KEYS:
            kind, path = RUN_KEYS[key]
            _check_type(key, value, kind)
            head, _, tail = path.partition(".")
            if tail:
                run.setdefault(head, {})[tail] = value
            else:
                run[head] = value
        elif key != "command":
            _check_type(key, value, SPEC_KEYS[key])
            spec[key] = value
    if command == "self-train":
        run.setdefault("self_train", {})["enabled"] = True
    return ExperimentSpec(command, RunConfig.from_dict(run), **spec)


def load_config(path, command: str, overrides: Optional[dict] = None) -> ExperimentSpec:
    """Read a YAML key-value file; ``overrides`` (flag values) win over file values."""
    return resolve(command, read_config_file(path) if path else {}, overrides or {})


# ----------------------------------------------------------------------------
# argument parsing


def _int_list(text: str) -> list:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in {"1", "true", "yes", "on"}:
        return True
    if lowered in {"0", "false", "no", "off"}:
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="igsd", description="Iterative graph self-distillation")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML file with flat keys mirroring the flags")
        p.add_argument("-v", "--verbose", action="store_true")
        types = {**{k: kind for k, (kind, _) in RUN_KEYS.items()}, **SPEC_KEYS}
        for key, kind in types.items():
            if key == "command":
                continue
            flag = "--" + key.replace("_", "-")
            if kind is bool:
                p.add_argument(flag, dest=key, type=_bool, nargs="?", const=True, default=None)
            elif kind is list:
                p.add_argument(flag, dest=key, type=_int_list, default=None)
            else:
                p.add_argument(flag, dest=key, type=kind, default=None)
        p.add_argument("--seed", dest="seeds", type=lambda s: [int(s)], default=None)
    return parser


# ----------------------------------------------------------------------------
# orchestration


def load_dataset(spec: ExperimentSpec) -> GraphDataset:
    if spec.dataset == "planted":
        return planted_dataset(seed=0)
    root = Path(spec.data_dir) / spec.dataset
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} not found")
    return parse_tu_dataset(root, spec.dataset, spec.max_degree)


def _aggregate(rows: list, keys) -> dict:
    out = {}
    for key in keys:
        values = [r[key] for r in rows if r.get(key) is not None]
        if values:
            out[key] = {"mean": float(np.mean(values)), "std": float(np.std(values)), "n": len(values)}
    return out


def _write_rows(path: Path, rows: list) -> None:
    keys = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)


def _train_seed(spec: ExperimentSpec, seed: int, out_dir: Path) -> dict:
    """One training run; returns its summary row (metrics stay on disk)."""
    ds = load_dataset(spec)
    cfg = replace(spec.run, seed=seed)
    row = {"seed": seed}
    if spec.command in ("train-unsup", "sweep"):
        result = trainer.train_unsupervised(ds, cfg, out_dir=out_dir)
        row["final_loss"] = result.final("loss")
        if spec.folds > 1 and ds.has_labels:
            summary = evaluate.evaluate_unsupervised(ds, result.state, spec.folds, spec.repeats,
                                                     lam=cfg.mixup_lambda, seed=seed)
            row.update(accuracy_mean=summary.mean, accuracy_std=summary.std)
    else:
        split = split_semi(ds, SplitSpec(spec.labeled_fraction, seed=seed))
        result = trainer.train_semi(ds, split, cfg, out_dir=out_dir)
        row.update(final_loss=result.final("loss"), final_test_acc=result.final("test_acc"),
                   best_test_acc=result.best("test_acc"), pseudo_labels=result.final("pseudo_labels"))
    return row


def _run_seeds(spec: ExperimentSpec, out: Path) -> list:
    dirs = [out / f"seed_{s}" for s in spec.seeds]
    if spec.jobs > 1:
        with ProcessPoolExecutor(spec.jobs) as pool:
            return list(pool.map(_train_seed, [spec] * len(dirs), spec.seeds, dirs))
    return [_train_seed(spec, s, d) for s, d in zip(spec.seeds, dirs)]


def _read_metrics(path: Path) -> list:
    return [json.loads(line) for line in path.read_text().splitlines() if line]


def _training_command(spec: ExperimentSpec, out: Path) -> dict:
    rows = _run_seeds(spec, out)
    curves = {f"seed {s}": _read_metrics(out / f"seed_{s}" / "metrics.jsonl") for s in spec.seeds}
    keys = ("loss",) if spec.command == "train-unsup" else ("loss", "test_acc")
    plotting.plot_curves(curves, out / "figures" / "curves.png", keys)
    metric_keys = [k for k in rows[0] if k != "seed"]
    return {"rows": rows, "aggregate": _aggregate(rows, metric_keys)}


def _sweep_command(spec: ExperimentSpec, out: Path) -> dict:
    rows, runs = [], []
    for index, bs in enumerate(spec.batch_sizes):
        sub = replace(spec, run=replace(spec.run, batch_size=bs))
        seed_rows = _run_seeds(sub, out / f"bs_{bs}")
        for r in seed_rows:
            runs.append({"index": index, "batch_size": bs, **r})
        agg = _aggregate(seed_rows, ["accuracy_mean", "final_loss"])
        row = {"index": index, "batch_size": bs, "n_seeds": len(seed_rows),
               "final_loss": agg["final_loss"]["mean"]}
        if "accuracy_mean" in agg:
            # spread across seeds; each seed's own CV spread stays in runs.csv
            row.update(accuracy_mean=agg["accuracy_mean"]["mean"],
                       accuracy_std=agg["accuracy_mean"]["std"])
        rows.append(row)
        log.info("batch size %d: %s", bs, row)
    _write_rows(out / "runs.csv", runs)
    if all("accuracy_mean" in r for r in rows):
        plotting.plot_sweep(rows, out / "figures" / "sweep.png")
    return {"rows": rows}


def _load_checkpoint(spec: ExperimentSpec) -> ModelState:
    if not spec.checkpoint:
        raise ConfigError(f"{spec.command} requires --checkpoint")
    path = Path(spec.checkpoint)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint {path} not found")
    return ModelState.load(path)


def _eval_command(spec: ExperimentSpec, out: Path) -> dict:
    ds = load_dataset(spec)
    state = _load_checkpoint(spec)
    rows = []
    for seed in spec.seeds:
        s = evaluate.evaluate_unsupervised(ds, state, spec.folds, spec.repeats,
                                           lam=spec.run.mixup_lambda, seed=seed)
        rows.append({"seed": seed, "accuracy_mean": s.mean, "accuracy_std": s.std})
    return {"rows": rows, "aggregate": _aggregate(rows, ["accuracy_mean"])}


def _embed_command(spec: ExperimentSpec, out: Path) -> dict:
    ds = load_dataset(spec)
    state = _load_checkpoint(spec)
    table = evaluate.extract_embeddings(ds, state, spec.run.mixup_lambda, Path(spec.checkpoint).name)
    path = table.save_text(out / "embeddings.tsv", dataset=spec.dataset)
    return {"rows": [{"graphs": len(ds), "dim": table.dim, "lambda": table.lam, "path": str(path)}]}


def run(spec: ExperimentSpec) -> dict:
    """Execute a resolved experiment and write its artifacts under ``spec.out``."""
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = spec.to_flat()
    (out / "config.yaml").write_text(yaml.safe_dump(resolved, sort_keys=False))
    log.info("resolved config:\n%s", yaml.safe_dump(resolved, sort_keys=False))
    if spec.command in ("train-unsup", "train-semi", "self-train"):
        summary = _training_command(spec, out)
    elif spec.command == "sweep":
        summary = _sweep_command(spec, out)
    elif spec.command == "eval":
        summary = _eval_command(spec, out)
    else:
        summary = _embed_command(spec, out)
    summary = {"command": spec.command, **summary}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    _write_rows(out / "summary.csv", summary["rows"])
    return summary


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        spec = load_config(args.config, args.command, flags)
        summary = run(spec)
    except ConfigError as exc:
        print(f"igsd: config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"igsd: not found: {exc}", file=sys.stderr)
        return 3
    except IGSDError as exc:
        print(f"igsd: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary.get("aggregate", summary["rows"]), indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
