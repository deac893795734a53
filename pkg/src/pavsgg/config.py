"""Strict unified run configuration.

One JSON document carries every stage's settings plus a global seed that
sections inherit unless they set their own. Unknown keys anywhere are
rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .evaluation import EvalConfig
from .losses import LossConfig
from .matching import RamConfig
from .model import ModelConfig
from .scene import GenConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


_SECTIONS = {
    "gen": GenConfig,
    "ram": RamConfig,
    "model": ModelConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}

_TUPLE_FIELDS = {"interactive_confidence", "distractor_confidence", "ks"}
_SEEDED_SECTIONS = ("gen", "model", "train")


@dataclass
class RunConfig:
    seed: int
    gen: GenConfig
    ram: RamConfig
    model: ModelConfig
    loss: LossConfig
    train: TrainConfig
    eval: EvalConfig

    def validate(self):
        self.gen.validate()
        self.ram.validate()
        self.model.validate()
        self.loss.validate()
        self.train.validate()
        self.eval.validate()
        pairs = [
            ("feature_dim", self.gen.feature_dim, self.model.feature_dim),
            ("num_object_classes", self.gen.num_object_classes, self.model.num_object_classes),
            ("num_predicates", self.gen.num_predicates, self.model.num_predicates),
        ]
        for name, g, m in pairs:
            if g != m:
                raise ConfigError(f"gen.{name}={g} disagrees with model.{name}={m}")


def _build_section(name: str, cls, doc: dict, global_seed: int):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in section '{name}': {sorted(unknown)}")
    values = dict(doc)
    for key in _TUPLE_FIELDS & set(values):
        values[key] = tuple(values[key])
    if "seed" in known and "seed" not in values and name in _SEEDED_SECTIONS:
        values["seed"] = global_seed
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad section '{name}': {exc}") from exc


def run_config_from_dict(doc: dict) -> RunConfig:
    unknown = set(doc) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    seed = int(doc.get("seed", 0))
    sections = {
        name: _build_section(name, cls, doc.get(name, {}), seed)
        for name, cls in _SECTIONS.items()
    }
    cfg = RunConfig(seed=seed, **sections)
    try:
        cfg.validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_run_config(path) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return run_config_from_dict(doc)


def default_run_config(seed: int = 0) -> RunConfig:
    return run_config_from_dict({"seed": seed})
