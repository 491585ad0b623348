"""Differentiable per-block latency predictor"""

from .src.mlp import (
    HIDDEN,
    NormalizationSpec,
    SpeedMLP,
    SpeedModelError,
    grad_wrt_widths,
    layer_arrays,
    load,
    monotone_agreement,
    nested_pairs,
    predict,
    save,
)
from .src.train import (
    HISTORY_HEADER,
    EpochStats,
    SpeedFit,
    mape,
    normalization_for,
    relative_mse,
    train_speed_model,
    write_history,
)

__all__ = [
    "HIDDEN",
    "HISTORY_HEADER",
    "EpochStats",
    "NormalizationSpec",
    "SpeedFit",
    "SpeedMLP",
    "SpeedModelError",
    "grad_wrt_widths",
    "layer_arrays",
    "load",
    "mape",
    "monotone_agreement",
    "nested_pairs",
    "normalization_for",
    "predict",
    "relative_mse",
    "save",
    "train_speed_model",
    "write_history",
]
