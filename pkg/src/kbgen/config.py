"""Run configuration: JSON file plus ``key=value`` overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError


@dataclass
class RunConfig:
    # model
    d_model: int = 64
    n_heads: int = 8            # knowledge-base update / retrieval heads
    attn_heads: int = 4         # encoder and decoder attention heads
    enc_layers: int = 3
    dec_layers: int = 2
    d_ff: int = 0               # 0 -> 4 * d_model
    kb_size: int = 16           # 0 disables the knowledge base
    n_labels: int = 14
    conv_channels: tuple[int, int, int] = (8, 16, 32)
    grid: int = 32
    min_freq: int = 3
    max_len: int = 60
    # loss
    lambdas: tuple[float, float, float] = (1.0, 0.1, 0.1)
    cross_modal_negatives: bool = False
    # optimiser
    lr_visual: float = 5e-4
    lr_other: float = 1e-3
    weight_decay: float = 5e-5
    batch_size: int = 16
    epochs: int = 10
    max_steps: int = 0          # 0 -> no cap
    # data
    corpus_seed: int = 0
    corpus_size: int = 500
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    # misc
    beam: int = 1
    precision: str = "float64"
    seed: int = 0
    validate: bool = True

    def __post_init__(self):
        for name in ("conv_channels", "lambdas", "split"):
            setattr(self, name, tuple(getattr(self, name)))
        self.validate_config()

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32

    @property
    def ff_width(self) -> int:
        return self.d_ff or 4 * self.d_model

    def validate_config(self) -> None:
        if self.d_model < 1:
            raise ConfigError("d_model must be positive")
        for name in ("n_heads", "attn_heads"):
            h = getattr(self, name)
            if h < 1 or self.d_model % h:
                raise ConfigError(f"d_model={self.d_model} is not divisible by {name}={h}")
        if self.kb_size < 0:
            raise ConfigError("kb_size must be >= 0")
        if any(l < 0 for l in self.lambdas) or len(self.lambdas) != 3:
            raise ConfigError(f"lambdas must be three non-negative numbers, got {self.lambdas}")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {self.split}")
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"precision must be float64 or float32, got {self.precision!r}")
        if self.batch_size < 1 or self.epochs < 0 or self.beam < 1 or self.max_len < 3:
            raise ConfigError("batch_size, beam must be >= 1, epochs >= 0, max_len >= 3")
        if self.grid < 16 or self.grid % 4:
            raise ConfigError("grid must be a multiple of 4 and >= 16")

    def to_dict(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)


def _parse_value(raw: str, current: Any) -> Any:
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if isinstance(current, tuple):
        return tuple(type(current[0])(x) for x in raw.split(","))
    return type(current)(raw)


def apply_overrides(config: RunConfig, overrides: list[str]) -> RunConfig:
    changes = {}
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not hasattr(config, key):
            raise ConfigError(f"bad override {item!r}; expected key=value with a known key")
        try:
            changes[key] = _parse_value(raw, getattr(config, key))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return config.replace(**changes)


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    config = RunConfig()
    if path is not None:
        config = RunConfig.from_dict(json.loads(Path(path).read_text()))
    return apply_overrides(config, overrides or [])


TINY = dict(d_model=64, n_heads=2, attn_heads=2, kb_size=8, enc_layers=1, dec_layers=1)
