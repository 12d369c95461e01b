"""Run configuration: published defaults, JSON config files, CLI overrides.

Precedence is defaults < config file < command-line flags.  Unknown config
keys are rejected to catch typos.  The config hash covers every field that
can change numeric results (thread count and output paths are excluded,
since they must not).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .model import ModelConfig
from .training import TrainConfig

# Fields that never influence numeric output.
NON_NUMERIC_FIELDS = ("out", "threads")


@dataclass
class RunConfig:
    """Flat bag of every tunable; defaults are the published settings
    (embedding 128, 3 layers, 2 heads, dropout 0.4, edge dropout 0.2 with
    0.5 recommended for dense datasets, lr 0.008, 800 epochs, top-t 7)."""

    dataset: str | None = None
    out: str | None = None
    seed: int = 42
    threads: int = 1
    # model
    embed_dim: int = 128
    layers: int = 3
    heads: int = 2
    dropout: float = 0.4
    edge_dropout: float = 0.2
    top_t: int = 7
    variant: str = "full"
    decoder: str = "cross"
    # training
    lr: float = 0.008
    epochs: int = 800
    # evaluation
    folds: int = 10
    repeats: int = 1
    negatives: str = "all"
    lam_full_data: bool = False
    mask_init_features: bool = True
    # ranking / sweeps
    disease: str | None = None
    top_k: int = 10
    t_values: list[int] | None = None
    checkpoint: str | None = None

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            embed_dim=self.embed_dim,
            layers=self.layers,
            heads=self.heads,
            dropout=self.dropout,
            edge_dropout=self.edge_dropout,
            top_t=self.top_t,
            variant=self.variant,
            decoder=self.decoder,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, epochs=self.epochs, seed=self.seed)

    def to_dict(self) -> dict:
        return asdict(self)


_FIELD_TYPES = {f.name: f for f in fields(RunConfig)}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    """Parse a JSON config file into an override dict, rejecting unknown keys."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(raw) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(
            f"unknown config key(s) in {path}: {', '.join(unknown)}"
        )
    return raw


def resolve_config(file_overrides: dict | None = None,
                   flag_overrides: dict | None = None) -> RunConfig:
    """Merge defaults, config-file values, and CLI flags (highest wins)."""
    merged = {}
    for overrides in (file_overrides or {}, flag_overrides or {}):
        for key, value in overrides.items():
            if key not in _FIELD_TYPES:
                raise ConfigError(f"unknown config key: {key}")
            merged[key] = value
    cfg = RunConfig(**merged)
    cfg.model_config()  # validate model fields eagerly
    cfg.train_config()
    return cfg


def config_hash(cfg: RunConfig) -> str:
    """Hash of every numerically relevant resolved field."""
    payload = {
        name: value
        for name, value in cfg.to_dict().items()
        if name not in NON_NUMERIC_FIELDS
    }
    canon = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()
