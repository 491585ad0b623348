"""Searchable SR network, its forward pass, extraction and checkpoints"""

from .src.checkpoint import (
    CheckpointError,
    load_checkpoint,
    load_compact,
    load_supernet,
    save_checkpoint,
    save_compact,
    save_supernet,
    supernet_arrays,
    supernet_from_arrays,
    supernet_meta,
)
from .src.compact import CompactBlock, CompactModel, extract_architecture, heuristic_architecture
from .src.forward import (
    ArchitectureSnapshot,
    BlockTrace,
    adaptive_block_forward,
    binarize,
    block_forward,
    effective_widths,
    masked_conv_forward,
    model_forward,
    select_path,
    snapshot_architecture,
)
from .src.model import (
    BLOCK_DEPTH,
    AdaptiveSRBlock,
    ConvLayer,
    LatencyPredictor,
    MaskedConv,
    MaskedSRBlock,
    MaskLayer,
    ParamGroup,
    SupernetModel,
    binarize_mask,
)

__all__ = [
    "BLOCK_DEPTH",
    "AdaptiveSRBlock",
    "ArchitectureSnapshot",
    "BlockTrace",
    "CheckpointError",
    "CompactBlock",
    "CompactModel",
    "ConvLayer",
    "LatencyPredictor",
    "MaskLayer",
    "MaskedConv",
    "MaskedSRBlock",
    "ParamGroup",
    "SupernetModel",
    "adaptive_block_forward",
    "binarize",
    "binarize_mask",
    "block_forward",
    "effective_widths",
    "extract_architecture",
    "heuristic_architecture",
    "load_checkpoint",
    "load_compact",
    "load_supernet",
    "masked_conv_forward",
    "model_forward",
    "save_checkpoint",
    "save_compact",
    "save_supernet",
    "select_path",
    "snapshot_architecture",
    "supernet_arrays",
    "supernet_from_arrays",
    "supernet_meta",
]
