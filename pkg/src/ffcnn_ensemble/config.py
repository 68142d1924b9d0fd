"""Experiment configuration (TOML).

Grammar::

    seed = 0                      # experiment seed: subsets and base seeds
    [dataset]
    name = "mnist"                # or "cifar10"
    root = ""                     # defaults to $FFCNN_DATA_ROOT
    per_class = 1000              # 0 -> full training set
    test_per_class = 0            # 0 -> full test set
    [ensemble]
    energy = 0.995
    t1 = 0.98
    t2 = 0.7
    hard_stage = false
    min_hard_samples = 500        # hard stage skipped below this many hard train images
    svm_c = 1.0
    svm_gamma = 0.0               # 0 -> data-scaled default
    svm_tol = 0.001
    svm_scaling = "global"        # or "feature" (per-feature unit variance)
    [output]
    dir = "runs/mnist-s1"
    [[roster]]
    preset = "S1"                 # S1 | S2 | S2:ED-1..ED-4 | S3
    [[roster]]                    # or an explicit base entry
    name = "custom"
    tag = "S1"
    form = "GRAY"
    filter_sizes = [5, 5]
    kernel_counts = [6, 16]
    fc_dims = [120, 84, 10]
    seed = 0
    view = { kind = "CONV2", k1 = 30, k2 = 20 }

Presets expand into explicit entries at parse time, so serialising a parsed
config and parsing it again is the identity.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

from .ensemble import DEFAULT_ENERGY, MIN_HARD_SAMPLES, THRESHOLDS
from .ffcnn import BaseConfig, reseed, scheme1_roster, scheme2_roster, scheme3_roster
from .svm import SVMParams

DATA_ROOT_ENV = "FFCNN_DATA_ROOT"
DATASETS = ("mnist", "cifar10")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class DatasetSpec:
    name: str = "mnist"
    root: str = ""
    per_class: int = 0
    test_per_class: int = 0

    def resolved_root(self) -> Path:
        root = self.root or os.environ.get(DATA_ROOT_ENV, "")
        if not root:
            raise FileNotFoundError(f"no dataset root: set dataset.root or ${DATA_ROOT_ENV}")
        return Path(root)


@dataclass
class EnsembleOptions:
    energy: float = DEFAULT_ENERGY
    t1: float = 0.98
    t2: float = 0.7
    hard_stage: bool = False
    min_hard_samples: int = MIN_HARD_SAMPLES
    svm_c: float = 1.0
    svm_gamma: float = 0.0
    svm_tol: float = 1e-3
    svm_scaling: str = "global"

    def __post_init__(self):
        if self.svm_scaling not in ("global", "feature"):
            raise ValueError(f"svm_scaling must be 'global' or 'feature', got {self.svm_scaling!r}")

    def svm_params(self) -> SVMParams:
        return SVMParams(C=self.svm_c, gamma=self.svm_gamma or None, tol=self.svm_tol, scaling=self.svm_scaling)


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    roster: list[BaseConfig] = field(default_factory=list)
    ensemble: EnsembleOptions = field(default_factory=EnsembleOptions)
    output_dir: str = "runs/default"
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "dataset": {f.name: getattr(self.dataset, f.name) for f in fields(DatasetSpec)},
            "ensemble": {f.name: getattr(self.ensemble, f.name) for f in fields(EnsembleOptions)},
            "output": {"dir": self.output_dir},
            "roster": [b.to_dict() for b in self.roster],
        }

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def with_seed(self, seed: int) -> "ExperimentConfig":
        offset = seed - self.seed
        return ExperimentConfig(
            dataset=self.dataset,
            roster=[reseed(b, offset) for b in self.roster],
            ensemble=self.ensemble,
            output_dir=self.output_dir,
            seed=seed,
        )


def _section(data: dict, key: str, cls) -> object:
    raw = data.get(key, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"[{key}] must be a table")
    known = {f.name for f in fields(cls)}
    for k in raw:
        if k not in known:
            raise ConfigError(f"unknown config key '{key}.{k}'")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{key}]: {exc}") from exc


def expand_preset(preset: str, dataset: str, seed: int = 0) -> list[BaseConfig]:
    scheme, _, which = preset.partition(":")
    if scheme == "S1":
        return scheme1_roster(dataset, seed)
    if scheme == "S2":
        return scheme2_roster(dataset, which or "ED-4", seed)
    if scheme == "S3":
        return scheme3_roster(dataset, seed)
    raise ConfigError(f"unknown roster preset {preset!r}")


_BASE_KEYS = {f.name for f in fields(BaseConfig)}
_VIEW_KEYS = {"kind", "k1", "k2", "lambda0", "lambda1", "lambda2", "seed"}


def _base_entry(entry: dict, i: int) -> BaseConfig:
    for k in entry:
        if k not in _BASE_KEYS:
            raise ConfigError(f"unknown config key 'roster[{i}].{k}'")
    for k in entry.get("view", {}):
        if k not in _VIEW_KEYS:
            raise ConfigError(f"unknown config key 'roster[{i}].view.{k}'")
    try:
        return BaseConfig.from_dict(entry)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"roster[{i}]: {exc}") from exc


def parse_config(data: dict) -> ExperimentConfig:
    for k in data:
        if k not in ("seed", "dataset", "ensemble", "output", "roster"):
            raise ConfigError(f"unknown config key '{k}'")
    seed = int(data.get("seed", 0))
    dataset = _section(data, "dataset", DatasetSpec)
    if dataset.name not in DATASETS:
        raise ConfigError(f"dataset.name must be one of {DATASETS}, got {dataset.name!r}")
    ens_raw = dict(data.get("ensemble", {}))
    t1, t2 = THRESHOLDS[dataset.name]
    ens_raw.setdefault("t1", t1)
    ens_raw.setdefault("t2", t2)
    ensemble = _section({"ensemble": ens_raw}, "ensemble", EnsembleOptions)
    output = data.get("output", {})
    for k in output:
        if k != "dir":
            raise ConfigError(f"unknown config key 'output.{k}'")

    roster: list[BaseConfig] = []
    for i, entry in enumerate(data.get("roster", [])):
        if "preset" in entry:
            if set(entry) != {"preset"}:
                extra = sorted(set(entry) - {"preset"})[0]
                raise ConfigError(f"unknown config key 'roster[{i}].{extra}' next to a preset")
            roster.extend(expand_preset(entry["preset"], dataset.name, seed))
        else:
            roster.append(_base_entry(entry, i))
    if not roster:
        raise ConfigError("roster is empty")
    names = [b.name for b in roster]
    if len(set(names)) != len(names):
        raise ConfigError("roster base names must be unique")
    return ExperimentConfig(dataset, roster, ensemble, output.get("dir", "runs/default"), seed)


def loads(text: str) -> ExperimentConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    return parse_config(data)


def load_config(path) -> ExperimentConfig:
    return loads(Path(path).read_text())
