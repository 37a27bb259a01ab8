"""Experiment configuration: defaults, config files and override precedence."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .model import GateKind
from .training import TrainConfig

MODEL_NAMES = ("glu", "gtu", "gtru", "none", "bow", "tfidf")


class ConfigError(ValueError):
    """Invalid configuration; the CLI reports it as a usage error."""


@dataclass
class ExperimentConfig:
    gate: str = "glu"
    kernel_sizes: list[int] = field(default_factory=lambda: [3, 4, 5])
    filters: int = 100
    embed_dim: int = 300
    max_len: int = 100
    vocab_size: int = 20000
    dropout_embed: float = 0.5
    dropout_dense: float = 0.2
    batch_size: int = 16
    epochs: int = 50
    patience: int = 10
    rho: float = 0.95
    eps: float = 1e-6
    seed: int = 0
    train_embeddings: bool = False
    min_freq: int = 5
    n_seeds: int = 5
    embeddings: str | None = None
    out_dir: str | None = None

    def validate(self) -> "ExperimentConfig":
        if self.gate not in {g.value for g in GateKind}:
            raise ConfigError(f"gate must be one of glu, gtu, gtru, none; got {self.gate!r}")
        for name in ("filters", "embed_dim", "max_len", "vocab_size", "batch_size", "epochs", "patience", "min_freq", "n_seeds"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.kernel_sizes or any(h <= 0 for h in self.kernel_sizes):
            raise ConfigError(f"kernel_sizes must be positive integers, got {self.kernel_sizes}")
        if len(set(self.kernel_sizes)) != len(self.kernel_sizes):
            raise ConfigError(f"kernel_sizes must be distinct, got {self.kernel_sizes}")
        for name in ("dropout_embed", "dropout_dense"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {getattr(self, name)}")
        if not 0.0 < self.rho < 1.0 or self.eps <= 0:
            raise ConfigError("rho must be in (0, 1) and eps positive")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        return self

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            patience=self.patience,
            batch_size=self.batch_size,
            rho=self.rho,
            eps=self.eps,
            keep_embed=1.0 - self.dropout_embed,
            keep_dense=1.0 - self.dropout_dense,
            seed=self.seed if seed is None else seed,
        )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(name: str, value: Any) -> Any:
    default = getattr(ExperimentConfig(), name)
    try:
        if name == "kernel_sizes":
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split()]
            return [int(v) for v in value]
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes"):
                    return True
                if value.lower() in ("0", "false", "no"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        return None if value is None else str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for {name}: {value!r}") from None


def read_config_file(path) -> dict[str, Any]:
    """JSON object, or flat ``key = value`` lines (``#`` starts a comment)."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return dict(obj)
    out = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def build_config(overrides: Mapping[str, Any] | None = None, config_file=None) -> ExperimentConfig:
    """Defaults < config file < ``overrides``. Unknown keys are errors."""
    values: dict[str, Any] = {}
    for source in (read_config_file(config_file) if config_file else {}, overrides or {}):
        for key, value in source.items():
            key = key.replace("-", "_")
            if key not in _FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            if value is not None:
                values[key] = _coerce(key, value)
    return ExperimentConfig(**values).validate()
