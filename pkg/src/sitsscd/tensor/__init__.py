"""Minimal tensor library with reverse-mode differentiation."""

from .autodiff import (
    CHECK_DTYPE,
    WORKING_DTYPE,
    Tape,
    Tensor,
    active_tape,
    as_tensor,
    backward,
    debug_enabled,
    make_op,
    set_debug,
)
from .gradcheck import grad_check
from .ops import (
    add,
    batched_matmul,
    concat,
    conv2d,
    conv_transpose2d,
    fully_connected,
    group_norm,
    mean,
    mul,
    pointwise,
    relu,
    reshape,
    scale,
    softmax_axis,
    sub,
    take,
    transpose,
    upsample_bilinear,
)
from .ops import sum as tsum

__all__ = [
    "CHECK_DTYPE", "WORKING_DTYPE", "Tape", "Tensor", "active_tape", "as_tensor",
    "backward", "debug_enabled", "make_op", "set_debug", "grad_check", "add",
    "batched_matmul", "concat", "conv2d", "conv_transpose2d", "fully_connected",
    "group_norm", "mean", "mul", "pointwise", "relu", "reshape", "scale",
    "softmax_axis", "sub", "take", "transpose", "tsum", "upsample_bilinear",
]
