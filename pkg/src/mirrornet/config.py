"""Run configuration: defaults, strict YAML loading, and hashing.

Unknown keys are rejected rather than ignored so a typoed hyperparameter
name fails loudly instead of silently training with the default.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import yaml


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


@dataclass
class ModelConfig:
    latent_channels: int = 9
    pre_post_filters: list = field(default_factory=lambda: [128, 256, 256])
    enc_filters: list = field(default_factory=lambda: [256, 128, 9])
    dilations: list = field(default_factory=lambda: [1, 4, 16])
    kernel: int = 3
    up_down: list = field(default_factory=lambda: [4, 5])


@dataclass
class AudspecConfig:
    channels: int = 128
    frame_rate: int = 125
    fmin: float = 180.0
    fmax: float = 7000.0


@dataclass
class TrainSynthConfig:
    lr: float = 1e-3
    batch: int = 16
    decay: float = 0.5
    patience: int = 5
    epochs: int = 100


@dataclass
class InitConfig:
    lr: float = 1e-3
    epochs: int = 100


@dataclass
class LearnConfig:
    lr_enc: float = 1e-6
    lr_dec: float = 1e-6
    stage_epochs: list = field(default_factory=lambda: [5, 5])
    iterations: int = 20


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    audspec: AudspecConfig = field(default_factory=AudspecConfig)
    train_synth: TrainSynthConfig = field(default_factory=TrainSynthConfig)
    init: InitConfig = field(default_factory=InitConfig)
    learn: LearnConfig = field(default_factory=LearnConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]

    def validate(self) -> None:
        from . import arch, audfront

        m, a = self.model, self.audspec
        if m.latent_channels < 1:
            raise ConfigError("model.latent_channels must be >= 1")
        if m.enc_filters[-1] != m.latent_channels:
            raise ConfigError(
                f"model.enc_filters[-1]={m.enc_filters[-1]} must equal latent_channels={m.latent_channels}"
            )
        fixed = {
            "model.pre_post_filters": (m.pre_post_filters, list(arch.PRE_POST_FILTERS)),
            "model.enc_filters[:2]": (m.enc_filters[:2], list(arch.ENC_FILTERS)),
            "model.dilations": (m.dilations, list(nn_dilations())),
            "model.kernel": (m.kernel, 3),
            "model.up_down": (m.up_down, [arch.UP_FACTOR, arch.POOL_FACTOR]),
            "audspec.channels": (a.channels, audfront.N_CHANNELS),
            "audspec.frame_rate": (a.frame_rate, audfront.FRAME_RATE),
            "audspec.fmin": (float(a.fmin), float(audfront.FMIN)),
            "audspec.fmax": (float(a.fmax), float(audfront.FMAX)),
        }
        for name, (got, want) in fixed.items():
            if got != want:
                raise ConfigError(f"{name}={got} conflicts with the fixed architecture value {want}")
        for name, value in (
            ("train_synth.lr", self.train_synth.lr),
            ("train_synth.batch", self.train_synth.batch),
            ("train_synth.epochs", self.train_synth.epochs),
            ("init.lr", self.init.lr),
            ("init.epochs", self.init.epochs),
            ("learn.lr_enc", self.learn.lr_enc),
            ("learn.lr_dec", self.learn.lr_dec),
            ("learn.iterations", self.learn.iterations),
        ):
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if len(self.learn.stage_epochs) != 2 or any(e < 1 for e in self.learn.stage_epochs):
            raise ConfigError("learn.stage_epochs must be two positive integers")
        if not (0 < self.train_synth.decay <= 1):
            raise ConfigError("train_synth.decay must be in (0, 1]")


def nn_dilations() -> tuple:
    from .nn import TcnStack

    return TcnStack.DILATIONS


def _build(cls, raw: dict, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(raw).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for name, f in known.items():
        if name not in raw:
            continue
        value = raw[name]
        sub = _SECTION_TYPES.get((cls, name))
        kwargs[name] = _build(sub, value, f"{path}{name}.") if sub else value
    return cls(**kwargs)


_SECTION_TYPES = {
    (RunConfig, "model"): ModelConfig,
    (RunConfig, "audspec"): AudspecConfig,
    (RunConfig, "train_synth"): TrainSynthConfig,
    (RunConfig, "init"): InitConfig,
    (RunConfig, "learn"): LearnConfig,
}


def load_config(path: Optional[str] = None) -> RunConfig:
    """Load and validate a YAML run config; None gives validated defaults."""
    if path is None:
        cfg = RunConfig()
    else:
        with open(path) as f:
            raw = yaml.safe_load(f)
        if raw is None:
            raw = {}
        cfg = _build(RunConfig, raw, "")
    cfg.validate()
    return cfg


def dump_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=False)
