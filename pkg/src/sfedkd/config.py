"""Experiment configuration: JSON loading, defaults, validation, overrides.

Config files are plain JSON with nested blocks (dataset / partition / model /
train / eval / output). Any field can be overridden from the command line
with `--set dotted.path=value`. Validation errors carry the dotted field
path of the offending entry. See configs/schema.json for the full reference.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from .data import PartitionSpec
from .distill import METRICS, KDConfig
from .engine import (MODES, SEED_DATA, SEED_PARTITION, SEED_SPLIT,
                     TrainConfig, derive_seed)


class ConfigError(ValueError):
    """Invalid configuration; `field` is the dotted path of the bad entry."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


DEFAULTS: dict = {
    "master_seed": 0,
    "dataset": {
        "kind": "synthetic",
        "name": "synthetic",
        "n_per_class": 150,
        "classes": 10,
        "features": 16,
        "spread": 2.5,
        "seed": None,          # derived from master_seed when null
        "test_fraction": 0.2,
        "split_seed": None,    # derived from master_seed when null
        "images": None,        # IDX paths (kind == "idx")
        "labels": None,
        "test_images": None,
        "test_labels": None,
    },
    "partition": {"N": 100, "C": 2, "alpha": 0.5, "seed": None},
    "model": {"hidden": [32]},
    "train": {
        "M": 10, "K": 5, "R": 60, "E": 5,
        "batch_size": 64, "eta": 0.01, "weight_decay": 1e-4,
        "mode": "sfedkd",
        "kd": {
            "tau": 4.0, "gamma": 1.0, "beta": 3.0,
            "metric": "KL", "epsilon": 1e-4,
            "tau_sq": True, "uniform_g": False, "uniform_h": False,
        },
    },
    "eval": {"granularity": "round", "split": "test"},
    "output": {"dir": "runs/experiment", "formats": ["jsonl", "csv"]},
    "ablate": {"seeds": None, "k_values": None},
}


@dataclass
class DatasetConfig:
    kind: str
    name: str
    n_per_class: int
    classes: int
    features: int
    spread: float
    seed: int
    test_fraction: float
    split_seed: int
    images: str | None = None
    labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None


@dataclass
class EvalConfig:
    granularity: str = "round"
    split: str = "test"


@dataclass
class OutputConfig:
    dir: str = "runs/experiment"
    formats: list[str] = field(default_factory=lambda: ["jsonl", "csv"])


@dataclass
class AblateConfig:
    seeds: list[int]
    k_values: list[int]


@dataclass
class ExperimentConfig:
    master_seed: int
    dataset: DatasetConfig
    partition: PartitionSpec
    hidden: list[int]
    train: TrainConfig
    eval: EvalConfig
    output: OutputConfig
    ablate: AblateConfig

    def to_resolved_dict(self) -> dict:
        """Fully materialized config (all defaults and derived seeds filled)."""
        return {
            "master_seed": self.master_seed,
            "dataset": {
                "kind": self.dataset.kind,
                "name": self.dataset.name,
                "n_per_class": self.dataset.n_per_class,
                "classes": self.dataset.classes,
                "features": self.dataset.features,
                "spread": self.dataset.spread,
                "seed": self.dataset.seed,
                "test_fraction": self.dataset.test_fraction,
                "split_seed": self.dataset.split_seed,
                "images": self.dataset.images,
                "labels": self.dataset.labels,
                "test_images": self.dataset.test_images,
                "test_labels": self.dataset.test_labels,
            },
            "partition": {
                "N": self.partition.N, "C": self.partition.C,
                "alpha": self.partition.alpha, "seed": self.partition.seed,
            },
            "model": {"hidden": list(self.hidden)},
            "train": {
                "M": self.train.M, "K": self.train.K, "R": self.train.R,
                "E": self.train.E, "batch_size": self.train.batch_size,
                "eta": self.train.eta, "weight_decay": self.train.weight_decay,
                "mode": self.train.mode,
                "kd": {
                    "tau": self.train.kd.tau, "gamma": self.train.kd.gamma,
                    "beta": self.train.kd.beta, "metric": self.train.kd.metric,
                    "epsilon": self.train.kd.epsilon, "tau_sq": self.train.kd.tau_sq,
                    "uniform_g": self.train.kd.uniform_g,
                    "uniform_h": self.train.kd.uniform_h,
                },
            },
            "eval": {"granularity": self.eval.granularity, "split": self.eval.split},
            "output": {"dir": self.output.dir, "formats": list(self.output.formats)},
            "ablate": {"seeds": list(self.ablate.seeds),
                       "k_values": list(self.ablate.k_values)},
        }


def load_raw_config(path) -> dict:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    return raw


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply `dotted.path=value` overrides; values parse as JSON, else string."""
    out = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like dotted.path=value")
        path, _, text = item.partition("=")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = out
        keys = path.split(".")
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(path, "override path crosses a non-object")
        node[keys[-1]] = value
    return out


def _merge_defaults(raw: dict) -> dict:
    def merge(base, over, path):
        out = copy.deepcopy(base)
        for key, value in over.items():
            if key not in base:
                raise ConfigError(f"{path}{key}", "unknown field")
            if isinstance(base[key], dict) and isinstance(value, dict):
                out[key] = merge(base[key], value, f"{path}{key}.")
            else:
                out[key] = value
        return out
    return merge(DEFAULTS, raw, "")


def _need_int(cfg, path, minimum=None):
    value = _get(cfg, path)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {value}")
    return value


def _need_number(cfg, path, minimum=None, strict=False):
    value = _get(cfg, path)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    value = float(value)
    if minimum is not None and (value <= minimum if strict else value < minimum):
        op = ">" if strict else ">="
        raise ConfigError(path, f"must be {op} {minimum}, got {value}")
    return value


def _need_bool(cfg, path):
    value = _get(cfg, path)
    if not isinstance(value, bool):
        raise ConfigError(path, f"expected true/false, got {value!r}")
    return value


def _need_str(cfg, path, choices=None):
    value = _get(cfg, path)
    if not isinstance(value, str):
        raise ConfigError(path, f"expected a string, got {value!r}")
    if choices is not None and value not in choices:
        raise ConfigError(path, f"must be one of {list(choices)}, got {value!r}")
    return value


def _get(cfg, path):
    node = cfg
    for key in path.split("."):
        node = node[key]
    return node


def resolve_config(raw: dict) -> ExperimentConfig:
    """Merge defaults, derive unset seeds, validate every field."""
    cfg = _merge_defaults(raw)

    master_seed = _need_int(cfg, "master_seed", minimum=0)

    kind = _need_str(cfg, "dataset.kind", choices=("synthetic", "idx"))
    name = _need_str(cfg, "dataset.name")
    ds_seed = cfg["dataset"]["seed"]
    if ds_seed is None:
        ds_seed = derive_seed(master_seed, SEED_DATA)
        cfg["dataset"]["seed"] = ds_seed
    split_seed = cfg["dataset"]["split_seed"]
    if split_seed is None:
        split_seed = derive_seed(master_seed, SEED_SPLIT)
        cfg["dataset"]["split_seed"] = split_seed
    dataset = DatasetConfig(
        kind=kind,
        name=name,
        n_per_class=_need_int(cfg, "dataset.n_per_class", minimum=1),
        classes=_need_int(cfg, "dataset.classes", minimum=2),
        features=_need_int(cfg, "dataset.features", minimum=2),
        spread=_need_number(cfg, "dataset.spread", minimum=0, strict=True),
        seed=_need_int(cfg, "dataset.seed", minimum=0),
        test_fraction=_need_number(cfg, "dataset.test_fraction", minimum=0),
        split_seed=_need_int(cfg, "dataset.split_seed", minimum=0),
        images=cfg["dataset"]["images"],
        labels=cfg["dataset"]["labels"],
        test_images=cfg["dataset"]["test_images"],
        test_labels=cfg["dataset"]["test_labels"],
    )
    if dataset.test_fraction >= 1.0:
        raise ConfigError("dataset.test_fraction", "must lie in [0, 1)")
    if kind == "idx":
        if not dataset.images or not dataset.labels:
            raise ConfigError("dataset.images", "idx datasets need images and labels paths")

    part_seed = cfg["partition"]["seed"]
    if part_seed is None:
        part_seed = derive_seed(master_seed, SEED_PARTITION)
        cfg["partition"]["seed"] = part_seed
    n_clients = _need_int(cfg, "partition.N", minimum=1)
    c_per_client = _need_int(cfg, "partition.C", minimum=1)
    alpha = _need_number(cfg, "partition.alpha", minimum=0, strict=True)
    if kind == "synthetic" and c_per_client > dataset.classes:
        raise ConfigError("partition.C", f"exceeds dataset.classes={dataset.classes}")
    partition = PartitionSpec(N=n_clients, C=c_per_client, alpha=alpha,
                              seed=_need_int(cfg, "partition.seed", minimum=0))

    hidden = _get(cfg, "model.hidden")
    if (not isinstance(hidden, list) or not hidden
            or any(isinstance(h, bool) or not isinstance(h, int) or h < 1 for h in hidden)):
        raise ConfigError("model.hidden", "expected a non-empty list of positive integers")

    m = _need_int(cfg, "train.M", minimum=1)
    k = _need_int(cfg, "train.K", minimum=1)
    if k > m:
        raise ConfigError("train.K", f"K={k} exceeds M={m}")
    if m > n_clients:
        raise ConfigError("train.M", f"M={m} exceeds partition.N={n_clients}")
    kd = KDConfig(
        tau=_need_number(cfg, "train.kd.tau", minimum=0, strict=True),
        gamma=_need_number(cfg, "train.kd.gamma", minimum=0),
        beta=_need_number(cfg, "train.kd.beta", minimum=0),
        metric=_need_str(cfg, "train.kd.metric", choices=METRICS),
        epsilon=_need_number(cfg, "train.kd.epsilon", minimum=0, strict=True),
        tau_sq=_need_bool(cfg, "train.kd.tau_sq"),
        uniform_g=_need_bool(cfg, "train.kd.uniform_g"),
        uniform_h=_need_bool(cfg, "train.kd.uniform_h"),
    )
    train = TrainConfig(
        M=m, K=k,
        R=_need_int(cfg, "train.R", minimum=1),
        E=_need_int(cfg, "train.E", minimum=1),
        batch_size=_need_int(cfg, "train.batch_size", minimum=1),
        eta=_need_number(cfg, "train.eta", minimum=0, strict=True),
        weight_decay=_need_number(cfg, "train.weight_decay", minimum=0),
        kd=kd,
        mode=_need_str(cfg, "train.mode", choices=MODES),
    )

    eval_cfg = EvalConfig(
        granularity=_need_str(cfg, "eval.granularity", choices=("round", "client")),
        split=_need_str(cfg, "eval.split", choices=("test", "train")),
    )
    if eval_cfg.split == "test" and dataset.test_fraction == 0 and not dataset.test_images:
        raise ConfigError("eval.split", "no test split: set dataset.test_fraction or test files")

    formats = _get(cfg, "output.formats")
    if (not isinstance(formats, list)
            or any(f not in ("jsonl", "csv") for f in formats)):
        raise ConfigError("output.formats", "expected a list drawn from ['jsonl', 'csv']")
    output = OutputConfig(dir=_need_str(cfg, "output.dir"), formats=list(formats))

    seeds = cfg["ablate"]["seeds"]
    if seeds is None:
        seeds = [master_seed]
    if (not isinstance(seeds, list) or not seeds
            or any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in seeds)):
        raise ConfigError("ablate.seeds", "expected a non-empty list of non-negative integers")
    k_values = cfg["ablate"]["k_values"]
    if k_values is None:
        k_values = [train.K]
    if (not isinstance(k_values, list) or not k_values
            or any(isinstance(v, bool) or not isinstance(v, int) or not 1 <= v <= train.M
                   for v in k_values)):
        raise ConfigError("ablate.k_values", "expected a list of integers in [1, train.M]")
    ablate = AblateConfig(seeds=list(seeds), k_values=list(k_values))

    return ExperimentConfig(
        master_seed=master_seed, dataset=dataset, partition=partition,
        hidden=list(hidden), train=train, eval=eval_cfg, output=output,
        ablate=ablate,
    )
