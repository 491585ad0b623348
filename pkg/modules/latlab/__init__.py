"""Latency dataset lab: block kernels, host timing and the analytic cost model"""

from .src.bench import (
    DEFAULT_MAXIMA,
    AnalyticCoeffs,
    CoefficientError,
    FusionReport,
    ModelTiming,
    TimerResolutionError,
    analytic_latency,
    benchmark_pool,
    build_dataset,
    calibrate,
    compare_fusion,
    measure_latency,
    measure_model,
    sample_configs,
)
from .src.kernels import KERNELS, block_weights, conv_pixel_shuffle, execute_block
from .src.records import (
    HEADER,
    DatasetParseError,
    LatencyDataset,
    LatencyRecord,
    WidthConfig,
    load_csv,
    meta_path,
    save_csv,
)

__all__ = [
    "DEFAULT_MAXIMA",
    "HEADER",
    "KERNELS",
    "AnalyticCoeffs",
    "CoefficientError",
    "DatasetParseError",
    "FusionReport",
    "LatencyDataset",
    "LatencyRecord",
    "ModelTiming",
    "TimerResolutionError",
    "WidthConfig",
    "analytic_latency",
    "benchmark_pool",
    "block_weights",
    "build_dataset",
    "calibrate",
    "compare_fusion",
    "conv_pixel_shuffle",
    "execute_block",
    "load_csv",
    "measure_latency",
    "measure_model",
    "meta_path",
    "sample_configs",
    "save_csv",
]
