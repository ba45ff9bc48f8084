"""Run configuration: dataclasses, JSON schema validation, dot-path overrides.

A run config is a single JSON document consumed by every CLI command.  Unknown
keys are rejected so stale experiment files fail loudly instead of silently
ignoring a typo.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .errors import ConfigError


@dataclass
class SevitConfig:
    rates: list[int] = field(default_factory=lambda: [1, 2, 4, 8])
    patch: int = 9
    embed_dim: int = 128
    depth: int = 2
    heads: int = 4


@dataclass
class MotionConfig:
    kind: str = "small_conv3d"  # small_conv3d | small_vit
    channels: list[int] = field(default_factory=lambda: [32, 64, 128])


@dataclass
class CofmConfig:
    heads: int = 4
    gate_hidden_ratio: int = 4


@dataclass
class ModelConfig:
    feature_dim: int = 128
    motion: MotionConfig = field(default_factory=MotionConfig)
    sevit: SevitConfig = field(default_factory=SevitConfig)
    cofm: CofmConfig = field(default_factory=CofmConfig)
    # Component toggles.  emotion_branch=False is the motion-only ablation
    # (classify from the motion feature, SEVit and CoFM never built).
    # use_cofm=False falls back to a fixed 0.5/0.5 sum of the orthogonalized
    # features.  The orthogonal loss is toggled through loss.lambda_orth.
    emotion_branch: bool = True
    use_cofm: bool = True


@dataclass
class LossWeights:
    lambda_au: float = 1.0
    lambda_orth: float = 1.0
    focal_gamma: float = 2.0


@dataclass
class OptimSchedule:
    lr: float = 1e-4
    weight_decay: float = 1e-3
    batch_size: int = 128
    epochs: int = 200
    motion_lr_decay: float = 0.1
    motion_decay_every: int = 100


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimSchedule = field(default_factory=OptimSchedule)
    seed: int = 0
    deterministic: bool = True
    jobs: int = 1

    def to_dict(self) -> dict:
        return {
            "model": {
                "feature_dim": self.model.feature_dim,
                "motion": {"kind": self.model.motion.kind, "channels": list(self.model.motion.channels)},
                "sevit": {
                    "rates": list(self.model.sevit.rates),
                    "patch": self.model.sevit.patch,
                    "embed_dim": self.model.sevit.embed_dim,
                    "depth": self.model.sevit.depth,
                    "heads": self.model.sevit.heads,
                },
                "cofm": {
                    "heads": self.model.cofm.heads,
                    "gate_hidden_ratio": self.model.cofm.gate_hidden_ratio,
                },
                "emotion_branch": self.model.emotion_branch,
                "use_cofm": self.model.use_cofm,
            },
            "loss": {
                "lambda_au": self.loss.lambda_au,
                "lambda_orth": self.loss.lambda_orth,
                "focal_gamma": self.loss.focal_gamma,
            },
            "optim": {
                "lr": self.optim.lr,
                "weight_decay": self.optim.weight_decay,
                "batch_size": self.optim.batch_size,
                "epochs": self.optim.epochs,
                "motion_lr_decay": self.optim.motion_lr_decay,
                "motion_decay_every": self.optim.motion_decay_every,
            },
            "seed": self.seed,
            "deterministic": self.deterministic,
            "jobs": self.jobs,
        }


_RUN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "feature_dim": {"type": "integer", "minimum": 2},
                "motion": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["small_conv3d", "small_vit"]},
                        "channels": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                    },
                },
                "sevit": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "rates": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                        "patch": {"type": "integer", "minimum": 1},
                        "embed_dim": {"type": "integer", "minimum": 4},
                        "depth": {"type": "integer", "minimum": 1},
                        "heads": {"type": "integer", "minimum": 1},
                    },
                },
                "cofm": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "heads": {"type": "integer", "minimum": 1},
                        "gate_hidden_ratio": {"type": "integer", "minimum": 1},
                    },
                },
                "emotion_branch": {"type": "boolean"},
                "use_cofm": {"type": "boolean"},
            },
        },
        "loss": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda_au": {"type": "number", "minimum": 0},
                "lambda_orth": {"type": "number", "minimum": 0},
                "focal_gamma": {"type": "number", "minimum": 0},
            },
        },
        "optim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "weight_decay": {"type": "number", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "epochs": {"type": "integer", "minimum": 0},
                "motion_lr_decay": {"type": "number", "exclusiveMinimum": 0},
                "motion_decay_every": {"type": "integer", "minimum": 1},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "deterministic": {"type": "boolean"},
        "jobs": {"type": "integer", "minimum": 1},
    },
}


def validate_run_dict(raw: dict) -> None:
    """Schema-check a raw run-config dict, raising ConfigError on violation."""
    try:
        jsonschema.validate(raw, _RUN_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config key {path}: {exc.message}") from exc


def run_config_from_dict(raw: dict) -> RunConfig:
    validate_run_dict(raw)
    cfg = RunConfig()
    model = raw.get("model", {})
    if "feature_dim" in model:
        cfg.model.feature_dim = model["feature_dim"]
    motion = model.get("motion", {})
    cfg.model.motion.kind = motion.get("kind", cfg.model.motion.kind)
    cfg.model.motion.channels = list(motion.get("channels", cfg.model.motion.channels))
    sevit = model.get("sevit", {})
    for key in ("patch", "embed_dim", "depth", "heads"):
        if key in sevit:
            setattr(cfg.model.sevit, key, sevit[key])
    if "rates" in sevit:
        cfg.model.sevit.rates = list(sevit["rates"])
    cofm = model.get("cofm", {})
    cfg.model.cofm.heads = cofm.get("heads", cfg.model.cofm.heads)
    cfg.model.cofm.gate_hidden_ratio = cofm.get("gate_hidden_ratio", cfg.model.cofm.gate_hidden_ratio)
    if "emotion_branch" in model:
        cfg.model.emotion_branch = model["emotion_branch"]
    if "use_cofm" in model:
        cfg.model.use_cofm = model["use_cofm"]
    loss = raw.get("loss", {})
    for key in ("lambda_au", "lambda_orth", "focal_gamma"):
        if key in loss:
            setattr(cfg.loss, key, float(loss[key]))
    optim = raw.get("optim", {})
    for key in ("lr", "weight_decay", "motion_lr_decay"):
        if key in optim:
            setattr(cfg.optim, key, float(optim[key]))
    for key in ("batch_size", "epochs", "motion_decay_every"):
        if key in optim:
            setattr(cfg.optim, key, int(optim[key]))
    if "seed" in raw:
        cfg.seed = int(raw["seed"])
    if "deterministic" in raw:
        cfg.deterministic = bool(raw["deterministic"])
    if "jobs" in raw:
        cfg.jobs = int(raw["jobs"])
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("run config must be a JSON object")
    return run_config_from_dict(raw)


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``--set dotted.key=json_value`` overrides to a raw config dict.

    Values are parsed as JSON where possible, otherwise taken as strings, so
    both ``--set optim.lr=0.001`` and ``--set model.sevit.rates=[1,2,4]`` work.
    """
    out = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, _, text = item.partition("=")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted!r} descends into a non-object")
        node[parts[-1]] = value
    return out
