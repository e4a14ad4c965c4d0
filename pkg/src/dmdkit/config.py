"""Run configuration: defaults, JSON loading, and validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import FormatError, ValidationError
from .loss import LossWeights

# Channel ladder of the reference encoder; documentation for demos, the
# desk-scale pipeline only ever uses inner_dim channels.
REFERENCE_CHANNELS = (48, 96, 192, 384, 768)


@dataclass(frozen=True)
class RunConfig:
    """Knobs shared by the CLI and demo pipeline."""

    seed: int = 0
    bins: int = 8
    min_area_frac: float = 0.005
    state_size: int = 4
    inner_dim: int = 16
    pe_base: float = 10000.0
    num_experts: int = 4
    expert_top_k: int = 2
    memory_items: int = 4
    item_top_k: int = 2
    update_rate: float = 0.5
    alpha_range: tuple = (0.75, 0.9)
    beta_range: tuple = (0.2, 0.4)
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValidationError(f"seed must be a non-negative integer, got {self.seed!r}")
        if not isinstance(self.bins, (int, np.integer)) or self.bins < 1:
            raise ValidationError(f"bins must be >= 1, got {self.bins!r}")
        if not 0.0 <= self.min_area_frac < 1.0:
            raise ValidationError(f"min_area_frac must lie in [0, 1), got {self.min_area_frac!r}")
        if self.state_size < 1:
            raise ValidationError(f"state_size must be >= 1, got {self.state_size!r}")
        if self.inner_dim < 4 or self.inner_dim % 4 != 0:
            raise ValidationError(
                f"inner_dim must be a positive multiple of 4, got {self.inner_dim!r}"
            )
        if not self.pe_base > 1.0:
            raise ValidationError(f"pe_base must be > 1, got {self.pe_base!r}")
        if self.num_experts < 1:
            raise ValidationError(f"num_experts must be >= 1, got {self.num_experts!r}")
        if not 1 <= self.expert_top_k <= self.num_experts:
            raise ValidationError(
                f"expert_top_k must lie in [1, num_experts], got {self.expert_top_k!r}"
            )
        if self.memory_items < 1:
            raise ValidationError(f"memory_items must be >= 1, got {self.memory_items!r}")
        if not 1 <= self.item_top_k <= self.memory_items:
            raise ValidationError(
                f"item_top_k must lie in [1, memory_items], got {self.item_top_k!r}"
            )
        if not 0.0 < self.update_rate <= 1.0:
            raise ValidationError(f"update_rate must lie in (0, 1], got {self.update_rate!r}")
        for name in ("alpha_range", "beta_range"):
            rng = tuple(float(v) for v in getattr(self, name))
            if len(rng) != 2 or not all(np.isfinite(rng)):
                raise ValidationError(f"{name} must be two finite numbers")
            if not 0.0 <= rng[0] <= rng[1]:
                raise ValidationError(f"{name} must satisfy 0 <= lo <= hi, got {rng}")
            object.__setattr__(self, name, rng)

    def to_dict(self) -> dict:
        payload = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "loss_weights":
                payload[f.name] = value.to_dict()
            elif isinstance(value, tuple):
                payload[f.name] = list(value)
            else:
                payload[f.name] = value
        return payload


def config_from_dict(payload: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = set(payload) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(payload)
    if "loss_weights" in kwargs:
        kwargs["loss_weights"] = LossWeights.from_dict(kwargs["loss_weights"])
    return RunConfig(**kwargs)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a config from defaults, an optional JSON file, then overrides."""
    payload: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise FormatError("config file must hold a JSON object")
        payload.update(raw)
    if overrides:
        payload.update(overrides)
    return config_from_dict(payload)


def save_config(config: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
