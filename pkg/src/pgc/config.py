"""Experiment configuration files.

One TOML file describes a full run.  Every table maps onto a dataclass, and
unknown keys are rejected rather than ignored::

    seed = 0

    [env]          # EnvConfig fields
    noise_std = 0.55

    [predictor]    # head and data settings
    head = "gaussian"            # gaussian | diagonal | categorical
    shared = false
    prev_action = false
    levels = 3                   # categorical only
    train_episodes = 500

    [train]        # TrainConfig fields
    [detector]     # DetectorConfig fields
    [cem]          # CemConfig fields

    [[attacks]]    # AttackSpec fields, one table per attack condition
    kind = "rand"
    victims = [0]

    [evaluation]
    clean_episodes = 500
    attack_episodes = 500
    beta_points = 50
    beta_low = 0.1
    beta_high = 100.0
    out_dir = "runs/default"
    chunk = 250
"""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks import AttackSpec, CemConfig
from .detector import DetectorConfig
from .env import EnvConfig
from .io import config_hash

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PredictorSettings:
    head: str = "gaussian"
    shared: bool = False
    prev_action: bool = False
    levels: int = 3
    train_episodes: int = 500
    validation_episodes: int = 200

    def __post_init__(self):
        if self.head not in ("gaussian", "diagonal", "categorical"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.levels < 2:
            raise ValueError("levels must be at least 2")
        if self.train_episodes < 0 or self.validation_episodes < 0:
            raise ValueError("episode counts must be nonnegative")


@dataclass(frozen=True)
class EvaluationSettings:
    clean_episodes: int = 500
    attack_episodes: int = 500
    beta_points: int = 50
    beta_low: float = 0.1
    beta_high: float = 100.0
    out_dir: str = "runs/default"
    chunk: int = 250

    def __post_init__(self):
        if self.clean_episodes < 1 or self.attack_episodes < 1:
            raise ValueError("evaluation needs at least one episode per condition")
        if not 0 < self.beta_low < self.beta_high or self.beta_points < 2:
            raise ValueError("invalid beta grid")
        if self.chunk < 1:
            raise ValueError("chunk must be positive")

    def betas(self) -> np.ndarray:
        return np.geomspace(self.beta_low, self.beta_high, self.beta_points)


def _train_defaults():
    # desk-scale settings; TrainConfig's own defaults are the large-model ones
    from .predictor import TrainConfig
    return TrainConfig(learning_rate=0.02, batch_size=50, epochs=12, hidden_size=16)


def _default_attacks():
    return (AttackSpec("rand"), AttackSpec("grad"), AttackSpec("act"), AttackSpec("dyn", lam=1.0))


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    env: EnvConfig = field(default_factory=lambda: EnvConfig(noise_std=0.55))
    predictor: PredictorSettings = field(default_factory=PredictorSettings)
    train: "object" = field(default_factory=_train_defaults)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    cem: CemConfig = field(default_factory=CemConfig)
    attacks: tuple = field(default_factory=_default_attacks)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "attacks":
                out[f.name] = [_plain(dataclasses.asdict(a)) for a in v]
            elif dataclasses.is_dataclass(v):
                out[f.name] = _plain(dataclasses.asdict(v))
            else:
                out[f.name] = v
        return out

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _plain(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, tuple):
            v = [list(x) if isinstance(x, tuple) else x for x in v]
        out[k] = v
    return out


def _build(cls, table, section: str):
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    try:
        return cls(**table)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section}]: {e}") from e


def from_dict(raw: dict) -> RunConfig:
    from .predictor import TrainConfig

    allowed = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    base = RunConfig()
    kw = {}
    if "seed" in raw:
        if not isinstance(raw["seed"], int) or isinstance(raw["seed"], bool):
            raise ConfigError("seed must be an integer")
        kw["seed"] = raw["seed"]
    sections = {"env": EnvConfig, "predictor": PredictorSettings, "detector": DetectorConfig,
                "cem": CemConfig, "evaluation": EvaluationSettings, "train": TrainConfig}
    for name, cls in sections.items():
        if name in raw:
            # tables override the run defaults field by field
            merged = {**_plain(dataclasses.asdict(getattr(base, name))), **raw[name]} \
                if isinstance(raw[name], dict) else raw[name]
            kw[name] = _build(cls, merged, name)
    if "env" in kw:
        try:
            kw["env"].validate()
        except ValueError as e:
            raise ConfigError(f"[env]: {e}") from e
    if "attacks" in raw:
        if not isinstance(raw["attacks"], list):
            raise ConfigError("attacks must be an array of tables")
        kw["attacks"] = tuple(_build(AttackSpec, a, f"attacks.{k}")
                              for k, a in enumerate(raw["attacks"]))
    return RunConfig(**kw)


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return from_dict(raw)
