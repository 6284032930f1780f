"""Experiment configuration: nested dataclasses, file loading and dotted overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .aggregators import AggregatorSpec
from .attacks import AttackSpec
from .core import ConfigError, HyperParams


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synth"  # synth | mnist
    data_dir: str | None = None  # mnist only; falls back to POISONBENCH_DATA_DIR
    train_per_class: int | None = None  # stratified subset of the training file
    test_limit: int | None = None
    num_classes: int = 10  # synth only from here on
    dim: int = 20
    per_class: int = 100
    test_per_class: int = 50
    spread: float = 0.5


@dataclass(frozen=True)
class PartitionConfig:
    kind: str = "iid"  # iid | dirichlet | one_class
    beta: float = 1.0


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "softmax"  # softmax | mlp
    hidden: int = 50


@dataclass(frozen=True)
class TrainConfig:
    log_every: int | None = None  # None: ceil(T / 200)
    batch_size: int | str = 1  # samples per worker per step, or "full"
    measure_sigma2: bool = True
    schedule: str = "none"  # none | ragg | mean
    L: float | None = None  # smoothness for the schedule; softmax estimate when unset
    sigma: float | None = None  # noise level for the schedule; measured at x0 when unset


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    attack: AttackSpec = field(default_factory=AttackSpec)
    aggregator: AggregatorSpec = field(default_factory=AggregatorSpec)
    hyper: HyperParams = field(default_factory=HyperParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def num_classes(self) -> int:
        return 10 if self.dataset.kind == "mnist" else self.dataset.num_classes

    def validate(self) -> "ExperimentConfig":
        """Cross-field checks that need no data; raises ConfigError naming the field."""
        d, p, h = self.dataset, self.partition, self.hyper
        if d.kind not in ("synth", "mnist"):
            raise ConfigError(f"unknown dataset kind {d.kind!r}", "dataset.kind")
        if p.kind not in ("iid", "dirichlet", "one_class"):
            raise ConfigError(f"unknown partition kind {p.kind!r}", "partition.kind")
        if p.kind == "dirichlet" and not p.beta > 0:
            raise ConfigError(f"Dirichlet beta must be positive, got {p.beta}", "partition.beta")
        if p.kind == "one_class" and h.W != self.num_classes:
            raise ConfigError(f"one_class needs W equal to the class count ({h.W} != {self.num_classes})",
                              "partition")
        if self.model.kind not in ("softmax", "mlp"):
            raise ConfigError(f"unknown model {self.model.kind!r}", "model.kind")
        if self.model.hidden < 1:
            raise ConfigError("hidden must be >= 1", "model.hidden")
        self.aggregator.validate(h.W, h.R)
        bs = self.train.batch_size
        if not (bs == "full" or (isinstance(bs, int) and bs >= 1)):
            raise ConfigError(f"batch_size must be a positive integer or 'full', got {bs!r}", "train.batch_size")
        if self.train.schedule not in ("none", "ragg", "mean"):
            raise ConfigError(f"unknown schedule {self.train.schedule!r}", "train.schedule")
        if self.train.schedule != "none" and self.model.kind == "mlp" and self.train.L is None:
            raise ConfigError("the schedule needs train.L for the MLP", "train.L")
        if self.train.log_every is not None and self.train.log_every < 1:
            raise ConfigError("log_every must be >= 1", "train.log_every")
        if d.kind == "synth" and (d.per_class < 1 or d.test_per_class < 0 or d.dim < 1):
            raise ConfigError("synthetic data needs per_class >= 1, dim >= 1, test_per_class >= 0",
                              "dataset")
        return self


SECTIONS = {
    "dataset": DatasetConfig,
    "partition": PartitionConfig,
    "model": ModelConfig,
    "attack": AttackSpec,
    "aggregator": AggregatorSpec,
    "hyper": HyperParams,
    "train": TrainConfig,
}


def _coerce(value, type_name: str):
    # YAML 1.1 reads "1e-3" as a string; use the declared field type to recover numbers
    if not isinstance(value, str):
        if isinstance(value, int) and not isinstance(value, bool) and type_name.startswith("float"):
            return float(value)
        return value
    for kind, conv in (("float", float), ("int", int)):
        if type_name.startswith(kind):
            try:
                return conv(value)
            except ValueError:
                return value
    return value


def _build_section(name, cls, raw):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("expected a mapping", name)
    known = {f.name for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown key (expected one of {sorted(known)})", f"{name}.{key}")
    types = {f.name: str(f.type) for f in fields(cls)}
    raw = {k: _coerce(v, types[k]) for k, v in raw.items()}
    try:
        return cls(**raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), name) from exc


def from_dict(raw: dict) -> ExperimentConfig:
    """Build and validate a config; a run manifest (with a ``config`` key) is accepted too."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping", "config")
    if "config" in raw and isinstance(raw["config"], dict):
        raw = raw["config"]
    for key in raw:
        if key not in SECTIONS and key != "output_dir":
            raise ConfigError("unknown section", key)
    parts = {name: _build_section(name, cls, raw.get(name)) for name, cls in SECTIONS.items()}
    return ExperimentConfig(**parts, output_dir=str(raw.get("output_dir", "runs/default"))).validate()


def read_mapping(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}", "config") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}", "config") from exc
    return data or {}


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as YAML scalars."""
    raw = copy.deepcopy(raw)
    if "config" in raw and isinstance(raw["config"], dict):
        raw = raw["config"]
    for item in overrides:
        item = item[2:] if item.startswith("--") else item
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value", "override")
        key, value = item.split("=", 1)
        parsed = yaml.safe_load(value) if value != "" else None
        parts = key.split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError("cannot override inside a scalar", key)
        node[parts[-1]] = parsed
    return raw


def load_config(path=None, overrides: list[str] | None = None) -> ExperimentConfig:
    raw = read_mapping(path) if path is not None else {}
    return from_dict(apply_overrides(raw, overrides or []))
