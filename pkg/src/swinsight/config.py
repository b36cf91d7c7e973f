"""Experiment configuration: a sectioned ``key = value`` text file.

Example::

    [model]
    preset = swin-micro
    window_size = 4          # any ModelConfig field overrides the preset

    [train]
    learning_rate = 0.0001
    batch_size = 32
    epochs = 10
    seed = 0

    [data]
    datasets = D1, D2
    manifest.D1 = data/d1/manifest.csv
    manifest.D2 = data/d2/manifest.csv
    per_class = 1500
    split_ratios = 0.7, 0.15, 0.15

    [output]
    dir = runs/example

Unknown sections or keys are rejected.  Relative paths resolve against the
config file's directory.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .swin import PRESETS, ModelConfig
from .training import TrainConfig

_TRAIN_KEYS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)}
_DATASET_ID = re.compile(r"^[A-Za-z0-9_.-]+$")


@dataclass
class ExperimentConfig:
    model_preset: str = "swin-micro"
    model_overrides: dict[str, str] = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    manifests: dict[str, Path] = field(default_factory=dict)
    per_class: int = 1500
    split_ratios: tuple[float, float, float] | None = None
    out_dir: Path = Path("runs/default")
    source_text: str = ""
    source_path: Path | None = None

    @property
    def dataset_ids(self) -> list[str]:
        return list(self.manifests)

    @property
    def seed(self) -> int:
        return self.train.seed

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_mapping({**PRESETS[self.model_preset], **self.model_overrides})


def parse_config(text: str, base_dir: Path | None = None, source_path: Path | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",), comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    base_dir = base_dir or Path(".")
    allowed = {"model", "train", "data", "output"}
    unknown = [s for s in parser.sections() if s not in allowed]
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")

    cfg = ExperimentConfig(source_text=text, source_path=source_path)

    if parser.has_section("model"):
        sec = dict(parser.items("model"))
        name = sec.pop("preset", "swin-micro")
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        cfg.model_preset = name
        for key in sec:
            if key not in _MODEL_KEYS:
                raise ConfigError(f"unknown key [model] {key}")
        cfg.model_overrides = sec
    cfg.model_config()  # validate early

    if parser.has_section("train"):
        kwargs = {}
        for key, value in parser.items("train"):
            if key not in _TRAIN_KEYS:
                raise ConfigError(f"unknown key [train] {key}")
            kind = type(_TRAIN_KEYS[key].default)
            try:
                kwargs[key] = kind(value)
            except ValueError:
                raise ConfigError(f"bad value {value!r} for [train] {key}") from None
        cfg.train = TrainConfig(**kwargs)

    if parser.has_section("data"):
        sec = dict(parser.items("data"))
        ids = [s.strip() for s in sec.pop("datasets", "").split(",") if s.strip()]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"dataset ids must be unique, got {ids}")
        for ds in ids:
            if not _DATASET_ID.match(ds) or "+" in ds:
                raise ConfigError(f"invalid dataset id {ds!r}")
            key = f"manifest.{ds}"
            if key not in sec:
                raise ConfigError(f"[data] missing {key}")
            path = Path(sec.pop(key))
            cfg.manifests[ds] = path if path.is_absolute() else base_dir / path
        if "per_class" in sec:
            try:
                cfg.per_class = int(sec.pop("per_class"))
            except ValueError:
                raise ConfigError("[data] per_class must be an integer") from None
            if cfg.per_class < 1:
                raise ConfigError("[data] per_class must be >= 1")
        if "split_ratios" in sec:
            try:
                ratios = tuple(float(x) for x in sec.pop("split_ratios").split(","))
            except ValueError:
                raise ConfigError("[data] split_ratios must be three numbers") from None
            if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
                raise ConfigError(f"[data] split_ratios must be three nonnegative numbers summing to 1, got {ratios}")
            cfg.split_ratios = ratios
        if sec:
            raise ConfigError(f"unknown key(s) in [data]: {', '.join(sorted(sec))}")

    if parser.has_section("output"):
        sec = dict(parser.items("output"))
        out = Path(sec.pop("dir", "runs/default"))
        cfg.out_dir = out if out.is_absolute() else base_dir / out
        if sec:
            raise ConfigError(f"unknown key(s) in [output]: {', '.join(sorted(sec))}")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config(path.read_text(encoding="utf-8"), path.parent, path)
    missing = [str(p) for p in cfg.manifests.values() if not p.is_file()]
    if missing:
        raise ConfigError(f"manifest(s) not found: {', '.join(missing)}")
    return cfg
