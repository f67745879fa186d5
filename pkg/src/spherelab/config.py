"""Run configuration: nested dataclasses loaded from a YAML file.

Unknown keys are rejected with a :class:`ConfigError` naming the dotted key.
``--set a.b=value`` overrides are applied to the raw mapping before
validation, and values are parsed as YAML scalars.
"""

from __future__ import annotations

import copy
import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

import yaml

from .errors import ConfigError, SpherelabError
from .harness.data import BatchSpec
from .harness.model import ModelConfig
from .losses import LossConfig, MSParams
from .optimizers import OptimizerConfig
from .regularizers import RegularizerConfig


@dataclass
class DatasetConfig:
    num_classes: int = 10
    per_class: int = 30
    input_dim: int = 16
    spread: float = 3.0
    sigma: float = 1.0


@dataclass
class TrainConfig:
    iterations: int = 2000
    eval_interval: int = 500
    # direction variation of every embedding is measured between snapshots
    snapshot_interval: int = 1000
    recall_ks: list = field(default_factory=lambda: [1, 2, 4, 8])
    lr_decay_at: list = field(default_factory=list)
    lr_decay_factor: float = 0.1

    def __post_init__(self):
        if self.iterations < 0 or self.eval_interval < 0 or self.snapshot_interval < 0:
            raise ConfigError("iteration counts must be non-negative")


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/latest"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    batch: BatchSpec = field(default_factory=BatchSpec)
    loss: LossConfig = field(default_factory=LossConfig)
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value, hint, key: str):
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], key)
    if hint is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected true/false, got {value!r}", key)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{key}: expected an integer, got {value!r}", key)
        try:
            f = float(value)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {value!r}", key) from None
        if f != int(f):
            raise ConfigError(f"{key}: expected an integer, got {value!r}", key)
        return int(f)
    if hint is float:
        if isinstance(value, bool):
            raise ConfigError(f"{key}: expected a number, got {value!r}", key)
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}", key) from None
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}", key)
        return value
    if hint is list or origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}", key)
        return list(value)
    return value


def _build(cls, data: Any, prefix: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping", prefix)
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for k in data:
        if k not in names:
            key = f"{prefix}.{k}" if prefix else str(k)
            raise ConfigError(f"unknown config key {key!r}", key)
    kwargs = {}
    for name, value in data.items():
        key = f"{prefix}.{name}" if prefix else name
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, key)
        else:
            kwargs[name] = _coerce(value, hint, key)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except SpherelabError as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}", prefix) from exc


def apply_overrides(raw: dict, overrides: Iterable[str]) -> dict:
    """Apply ``a.b.c=value`` assignments to a nested mapping (copied)."""
    raw = copy.deepcopy(raw) if raw else {}
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value", item)
        key, text = item.split("=", 1)
        key = key.strip()
        parts = key.split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping", key)
        node[parts[-1]] = yaml.safe_load(text)
    return raw


def config_from_dict(raw: dict, overrides: Iterable[str] = ()) -> RunConfig:
    return _build(RunConfig, apply_overrides(raw, overrides), "")


def read_yaml(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError:
        raise
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_config(path, overrides: Iterable[str] = ()) -> RunConfig:
    return config_from_dict(read_yaml(path), overrides)


@dataclass
class Variant:
    name: str
    regularizer: RegularizerConfig


@dataclass
class CompareConfig:
    base: RunConfig
    variants: list
    raw_base: dict = field(default_factory=dict)


def load_compare_config(path, overrides: Iterable[str] = ()) -> CompareConfig:
    """A base run (inline mapping or a path relative to this file) plus regularizer variants."""
    raw = read_yaml(path)
    unknown = set(raw) - {"base", "variants"}
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown config key {key!r}", key)
    base = raw.get("base")
    if isinstance(base, str):
        base = read_yaml(Path(path).parent / base)
    if not isinstance(base, dict):
        raise ConfigError("compare config needs a 'base' run (mapping or path)", "base")
    base = apply_overrides(base, overrides)
    base_cfg = config_from_dict(base)
    variants_raw = raw.get("variants") or []
    if not isinstance(variants_raw, list) or not variants_raw:
        raise ConfigError("compare config needs a non-empty 'variants' list", "variants")
    variants, seen = [], set()
    for i, v in enumerate(variants_raw):
        prefix = f"variants[{i}]"
        if not isinstance(v, dict) or "name" not in v:
            raise ConfigError(f"{prefix}: each variant needs a name", prefix)
        extra = set(v) - {"name", "regularizer"}
        if extra:
            key = f"{prefix}.{sorted(extra)[0]}"
            raise ConfigError(f"unknown config key {key!r}", key)
        name = str(v["name"])
        if name in seen:
            raise ConfigError(f"duplicate variant name {name!r}", prefix)
        seen.add(name)
        reg = _build(RegularizerConfig, v.get("regularizer") or {}, f"{prefix}.regularizer")
        variants.append(Variant(name=name, regularizer=reg))
    return CompareConfig(base=base_cfg, variants=variants, raw_base=base)


__all__ = [
    "CompareConfig", "DatasetConfig", "MSParams", "RunConfig", "TrainConfig", "Variant",
    "apply_overrides", "config_from_dict", "load_compare_config", "load_config", "read_yaml",
]
