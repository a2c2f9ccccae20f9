"""Run configuration: a flat record mirrored 1:1 by the YAML config file
and by long-form CLI flags (flags win over file values)."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .joint import ModelConfig, TrainConfig
from .strategies import STRATEGY_KINDS, StrategyConfig

ORACLE_KINDS = ("gold", "human")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # corpus + split
    labeled_path: str = ""
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    labeled_fraction: float = 0.3
    max_len: int = 200

    # sampling strategy
    strategy: str = "nelp"
    alpha: float = 1.0
    beta: float = 1.0

    # active-learning protocol
    iterations: int = 10
    per_round: int = 1000

    # model (defaults follow the reference hyper-parameter table)
    char_dim: int = 128
    ngram_dim: int = 128
    hidden: int = 512
    attn_dim: int = 64
    dropout: float = 0.2
    ngram_order: int = 2  # 0 disables n-gram features

    # training
    epochs_with_ngrams: int = 30
    epochs_char_only: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    lam: float = 1.0
    clip_norm: float = 5.0
    warm_start: bool = False
    patience: int = 0  # 0 = fixed epoch budget (no early stopping)

    # n-gram embedding pretraining (skip-gram)
    sg_window: int = 2
    sg_negatives: int = 5
    sg_epochs: int = 5
    sg_lr: float = 0.025
    sg_train_only: bool = False

    # oracle + annotation service
    oracle: str = "gold"
    human_deadline: float = 86400.0
    lease_seconds: float = 300.0
    port: int = 8571

    seed: int = 13
    eval_batch_size: int = 64

    def validate(self) -> "RunConfig":
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split_ratios must sum to 1: {self.split_ratios}")
        if not 0 < self.labeled_fraction < 1:
            raise ConfigError(f"labeled_fraction out of (0,1): {self.labeled_fraction}")
        if self.strategy not in STRATEGY_KINDS:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.oracle not in ORACLE_KINDS:
            raise ConfigError(f"unknown oracle {self.oracle!r}")
        if self.ngram_order not in (0, 2, 3, 4):
            raise ConfigError(f"ngram_order must be 0, 2, 3 or 4: {self.ngram_order}")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.per_round < 1:
            raise ConfigError("per_round must be >= 1")
        if self.hidden % 2:
            raise ConfigError("hidden width must be even (two directions)")
        if self.alpha < 0 or self.beta < 0 or self.lam < 0:
            raise ConfigError("alpha, beta and lam must be non-negative")
        return self

    # -- derived views -------------------------------------------------------

    @property
    def epochs(self) -> int:
        return self.epochs_with_ngrams if self.ngram_order else self.epochs_char_only

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            char_dim=self.char_dim,
            ngram_dim=self.ngram_dim,
            hidden=self.hidden,
            attn_dim=self.attn_dim,
            dropout=self.dropout,
            max_len=self.max_len,
            ngram_order=self.ngram_order or None,
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            clip_norm=self.clip_norm,
            lam=self.lam,
            seed=seed,
            patience=self.patience,
        )

    def strategy_config(self, seed: int) -> StrategyConfig:
        return StrategyConfig(
            kind=self.strategy, alpha=self.alpha, beta=self.beta, seed=seed
        )

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["split_ratios"] = list(self.split_ratios)
        return d

    def to_yaml(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "split_ratios" in data:
            data = dict(data, split_ratios=tuple(data["split_ratios"]))
        return cls(**data).validate()

    @classmethod
    def from_yaml(cls, path: str) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        return cls.from_dict(data)

    def with_overrides(self, **overrides) -> "RunConfig":
        """New config with non-None overrides applied (CLI flags win)."""
        clean = {k: v for k, v in overrides.items() if v is not None}
        if "split_ratios" in clean:
            clean["split_ratios"] = tuple(clean["split_ratios"])
        return dataclasses.replace(self, **clean).validate()
