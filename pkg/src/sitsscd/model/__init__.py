"""Encoder, temporal attention variants and parallel decoder."""

from .checkpoint import dumps_checkpoint, load_checkpoint, load_model, loads_checkpoint, save_checkpoint
from .config import VARIANTS, ModelConfig, count_parameters, default_channels
from .network import (
    AttentionMaps,
    TemporalAttentionUNet,
    apply_attention,
    forward,
    init_params,
    positional_encode,
)

__all__ = [
    "dumps_checkpoint", "load_checkpoint", "load_model", "loads_checkpoint", "save_checkpoint",
    "VARIANTS", "ModelConfig", "count_parameters", "default_channels", "AttentionMaps",
    "TemporalAttentionUNet", "apply_attention", "forward", "init_params", "positional_encode",
]
