"""Flat key-value run configuration shared by every command.

A configuration file holds ``key = value`` lines (``#`` starts a comment)
over a closed schema; unknown keys are rejected so typos fail loudly.
Command-line flags override file values, and the resolved configuration
is archived next to a run's outputs in the same format, which makes any
run reproducible from its artifact directory alone.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .encoder import EncoderConfig, PoolingStrategy
from .errors import ConfigError
from .finetune import FinetuneConfig
from .pretrain import PretrainConfig

__all__ = ["RunConfig"]


@dataclass
class RunConfig:
    """Every tunable of a run, in one flat namespace."""

    # encoder architecture
    num_layers: int = 4
    num_heads: int = 4
    hidden_size: int = 64
    ff_size: int = 256
    max_len: int = 64
    dropout: float = 0.1
    # vocabulary
    min_count: int = 1
    # pretraining
    tau: float = 0.05
    mlm_weight: float = 0.0
    mask_rate: float = 0.15
    batch_size: int = 8
    epochs: int = 10
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    seed: int = 0
    pooling: str = "CLS"
    data_fraction: float = 1.0
    validation_fraction: float = 0.1
    # fine-tuning
    ft_batch_size: int = 16
    ft_epochs: int = 7
    ft_learning_rate: float = 1e-3
    task: str = "pair"
    labels: str = ""
    # default input paths (mostly for sweep runs)
    triples: str = ""
    vocab: str = ""
    train_data: str = ""
    dev_data: str = ""

    @classmethod
    def field_types(cls) -> dict[str, type]:
        names = {"int": int, "float": float, "str": str}
        return {
            f.name: f.type if isinstance(f.type, type) else names[f.type] for f in fields(cls)
        }

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        config = cls()
        config.update_from_file(path)
        return config

    def update_from_file(self, path: str | Path) -> None:
        types = self.field_types()
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"{path}:{lineno}: unknown configuration key {key!r}")
            setattr(self, key, _convert(key, value, types[key]))

    def update(self, overrides: dict) -> None:
        """Apply explicit overrides (values may be strings or already typed)."""
        types = self.field_types()
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in types:
                raise ConfigError(f"unknown configuration key {key!r}")
            if isinstance(value, str):
                value = _convert(key, value, types[key])
            setattr(self, key, types[key](value))

    def write(self, path: str | Path) -> None:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in sorted(fields(self), key=lambda f: f.name)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=vocab_size,
            num_layers=self.num_layers,
            num_heads=self.num_heads,
            hidden_size=self.hidden_size,
            ff_size=self.ff_size,
            max_len=self.max_len,
            dropout=self.dropout,
        )

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(
            tau=self.tau,
            mlm_weight=self.mlm_weight,
            mask_rate=self.mask_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            seed=self.seed,
            pooling=PoolingStrategy.parse(self.pooling),
            data_fraction=self.data_fraction,
            validation_fraction=self.validation_fraction,
        )

    def finetune_config(self) -> FinetuneConfig:
        return FinetuneConfig(
            batch_size=self.ft_batch_size,
            epochs=self.ft_epochs,
            learning_rate=self.ft_learning_rate,
            weight_decay=self.weight_decay,
            seed=self.seed,
        )

    def label_list(self) -> list[str]:
        return [part.strip() for part in self.labels.split(",") if part.strip()]


def _convert(key: str, value: str, target: type):
    try:
        if target is int:
            return int(value)
        if target is float:
            return float(value)
        return value
    except ValueError as exc:
        raise ConfigError(f"configuration key {key!r} expects {target.__name__}, got {value!r}") from exc
