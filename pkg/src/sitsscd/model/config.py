"""Architecture hyperparameters and closed-form parameter counts."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Optional

from ..errors import ConfigError

VARIANTS = ("ours", "tae", "ltae")


def default_channels(levels: int, feature_size: int, heads: int, groups: int) -> list[int]:
    """Per-level widths: 1/8 of ``feature_size`` below the last level (64 at D=512)."""
    unit = math.lcm(heads, groups)
    low = max(unit, int(round(feature_size / 8 / unit)) * unit)
    low = min(low, feature_size)
    return [low] * (levels - 1) + [feature_size]


@dataclass
class ModelConfig:
    """Shape of the network; every parameter tensor is derivable from it.

    ``feature_size`` is the channel width D at the deepest level and
    ``key_dim`` is the key/query size d of the temporal attention.
    """

    n_classes: int = 6
    in_channels: int = 4
    levels: int = 4
    feature_size: int = 512
    key_dim: int = 4
    heads: int = 16
    t_max: int = 24
    variant: str = "ours"
    channels_per_level: Optional[list[int]] = None
    norm_groups: int = 4
    pe_period: float = 10000.0
    seed: int = 0
    channels: list[int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown attention variant {self.variant!r}; expected one of {VARIANTS}")
        if self.levels < 2:
            raise ConfigError("levels must be >= 2")
        if self.key_dim < 1:
            raise ConfigError("key_dim must be >= 1")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if self.in_channels < 1 or self.t_max < 1:
            raise ConfigError("in_channels and t_max must be positive")
        if self.heads < 1 or self.feature_size % self.heads:
            raise ConfigError(f"feature_size {self.feature_size} not divisible by heads {self.heads}")
        if self.feature_size % 2:
            raise ConfigError("feature_size must be even for the sinusoidal encoding")
        chans = self.channels_per_level
        if chans is None:
            chans = default_channels(self.levels, self.feature_size, self.heads, self.norm_groups)
        chans = [int(c) for c in chans]
        if len(chans) != self.levels:
            raise ConfigError(f"channels_per_level has {len(chans)} entries for {self.levels} levels")
        if chans[-1] != self.feature_size:
            raise ConfigError("last entry of channels_per_level must equal feature_size")
        if any(b < a for a, b in zip(chans, chans[1:])):
            raise ConfigError("channels_per_level must be nondecreasing")
        for c in chans:
            if c % self.heads or c % self.norm_groups:
                raise ConfigError(
                    f"level width {c} must be divisible by heads ({self.heads}) "
                    f"and norm_groups ({self.norm_groups})"
                )
        self.channels = chans

    @property
    def head_dim(self) -> int:
        return self.feature_size // self.heads

    @property
    def collapses_time(self) -> bool:
        return self.variant != "ours"

    @property
    def spatial_multiple(self) -> int:
        return 2 ** (self.levels - 1)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("channels")
        d["channels_per_level"] = list(self.channels)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls) if f.init}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def with_updates(self, **kw) -> "ModelConfig":
        d = self.to_dict()
        if "feature_size" in kw and "channels_per_level" not in kw:
            d["channels_per_level"] = None
        d.update(kw)
        return ModelConfig.from_dict(d)


def _conv(ci: int, co: int, k: int) -> int:
    return co * ci * k * k + co


def count_parameters(config: ModelConfig) -> int:
    """Number of learned scalars, from the architecture formulas alone."""
    c = config.channels
    k = config.n_classes
    total = _conv(config.in_channels, c[0], 3) + 2 * c[0]
    for lvl in range(1, config.levels):
        total += _conv(c[lvl - 1], c[lvl], 3) + 2 * c[lvl]
        total += _conv(c[lvl], c[lvl], 3) + 2 * c[lvl]
    proj = config.heads * config.key_dim * config.head_dim + config.heads * config.key_dim
    if config.variant == "ltae":
        total += proj + config.heads * config.key_dim
    else:
        total += 2 * proj
    for lvl in range(config.levels - 2, -1, -1):
        total += c[lvl + 1] * c[lvl] * 4 + c[lvl]
        total += _conv(2 * c[lvl], c[lvl], 3) + 2 * c[lvl]
    total += _conv(c[0], k, 1)
    return total
