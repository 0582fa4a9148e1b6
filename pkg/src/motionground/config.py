"""Run configuration: one nested JSON document covering corpus generation,
features, bank building, model, loss, training, and selection. Unknown keys
are rejected at every level, and every command echoes the fully resolved
snapshot it ran with."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .discovery import DiscoveryConfig
from .grounding import GroundingConfig
from .losses import LossConfig
from .model import ModelConfig
from .motion_encoder import EncoderConfig
from .scenes import CorpusConfig
from .trainer import FeatureConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class BankConfig:
    distractor_ratio: float = 3.0
    seed: int = 11


@dataclass
class SelectionConfig:
    expression_strategy: str = "adaptive"   # top_k | percentile | threshold | adaptive
    top_k: int = 5
    percentile: float = 70.0
    expression_threshold: float = 0.5
    track_mode: str = "threshold"           # threshold | otsu
    track_threshold: float | None = None    # None: calibrate on the val split

    def strategy_kwargs(self) -> dict:
        if self.expression_strategy == "top_k":
            return {"k": self.top_k}
        if self.expression_strategy == "percentile":
            return {"percentile": self.percentile}
        if self.expression_strategy == "threshold":
            return {"threshold": self.expression_threshold}
        return {}


@dataclass
class RunConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    bank: BankConfig = field(default_factory=BankConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        try:
            self.corpus.validate()
            self.model.encoder.validate()
            self.model.grounding.validate()
            self.loss.validate()
            self.train.validate()
        except ValueError as err:
            raise ConfigError(str(err)) from err


_NESTED = {
    "corpus": CorpusConfig,
    "features": FeatureConfig,
    "bank": BankConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "selection": SelectionConfig,
    "encoder": EncoderConfig,
    "grounding": GroundingConfig,
    "discovery": DiscoveryConfig,
}


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be an object, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown keys under {path or 'config'}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = path + "." + key if path else key
        if key in _NESTED and isinstance(value, dict):
            kwargs[key] = _build(_NESTED[key], value, sub)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as err:
        raise ConfigError(f"bad value under {path or 'config'}: {err}") from err


def _build_model(data: dict, path: str) -> ModelConfig:
    names = {"encoder", "grounding", "discovery", "init_seed"}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys under {path}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key == "init_seed":
            kwargs[key] = value
        else:
            kwargs[key] = _build(_NESTED[key], value, f"{path}.{key}")
    return ModelConfig(**kwargs)


def run_config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(data) - {f.name for f in dataclasses.fields(RunConfig)}
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key == "model":
            kwargs[key] = _build_model(value, "model")
        else:
            kwargs[key] = _build(_NESTED[key], value, key)
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def load_run_config(path: str | None) -> RunConfig:
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    return run_config_from_dict(data)
