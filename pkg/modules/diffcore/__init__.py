"""Dense tensors with reverse-mode differentiation and Adam"""

from .src.gradcheck import GradCheck, grad_check
from .src.ops import (
    KERNEL_SIZES,
    add,
    channel_scale,
    concat,
    conv2d,
    linear,
    mae_loss,
    mean,
    mse_loss,
    mul,
    pixel_shuffle,
    pixel_unshuffle,
    reduce_sum,
    relu,
    reshape,
    scale,
    scatter_channels,
    shift,
    straight_through,
    sub,
)
from .src.optim import Adam, AdamState, adam_step
from .src.tensor import (
    DiffcoreError,
    GradientError,
    ShapeError,
    Tensor,
    UnsupportedKernelError,
    as_tensor,
    grad_enabled,
    no_grad,
    tensor,
    zero_grad,
)

__all__ = [
    "KERNEL_SIZES",
    "Adam",
    "AdamState",
    "DiffcoreError",
    "GradCheck",
    "GradientError",
    "ShapeError",
    "Tensor",
    "UnsupportedKernelError",
    "adam_step",
    "add",
    "as_tensor",
    "channel_scale",
    "concat",
    "conv2d",
    "grad_check",
    "grad_enabled",
    "linear",
    "mae_loss",
    "mean",
    "mse_loss",
    "mul",
    "no_grad",
    "pixel_shuffle",
    "pixel_unshuffle",
    "reduce_sum",
    "relu",
    "reshape",
    "scale",
    "scatter_channels",
    "shift",
    "straight_through",
    "sub",
    "tensor",
    "zero_grad",
]
