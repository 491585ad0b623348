"""The srnas command line and its run configuration"""

from .src.commands import (
    GateFailure,
    Session,
    UsageFailure,
    bicubic_sr,
    build_supernet,
    cli,
    load_images,
    main,
    model_sr,
    search_config,
    setup_logging,
    split_images,
)
from .src.config import ENV_VAR, MODULES, ConfigError, as_plain, load_config, merged_schema, read_config_file
from .src.report import predicted_latency, render

__all__ = [
    "ENV_VAR",
    "MODULES",
    "ConfigError",
    "GateFailure",
    "Session",
    "UsageFailure",
    "as_plain",
    "bicubic_sr",
    "build_supernet",
    "cli",
    "load_config",
    "load_images",
    "main",
    "merged_schema",
    "model_sr",
    "predicted_latency",
    "read_config_file",
    "render",
    "search_config",
    "setup_logging",
    "split_images",
]
