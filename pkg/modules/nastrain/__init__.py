"""Joint weight, width and depth search under a latency budget, and fine-tuning"""

from .src.config import SEARCH_MODES, SearchConfig, SearchMode, TrainState
from .src.finetune import finetune, validation_psnr
from .src.history import BASE_COLUMNS, history_columns, read_history, write_history
from .src.loader import Batch, PatchLoader, make_patches
from .src.loss import speed_loss, total_loss
from .src.search import (
    STATE_FILE,
    SearchError,
    check_speed_caps,
    load_search_state,
    make_optimizer,
    run_search,
    save_search_state,
    search_step,
    trainable_groups,
)

__all__ = [
    "BASE_COLUMNS",
    "SEARCH_MODES",
    "STATE_FILE",
    "Batch",
    "PatchLoader",
    "SearchConfig",
    "SearchError",
    "SearchMode",
    "TrainState",
    "check_speed_caps",
    "finetune",
    "history_columns",
    "load_search_state",
    "make_optimizer",
    "make_patches",
    "read_history",
    "run_search",
    "save_search_state",
    "search_step",
    "speed_loss",
    "total_loss",
    "trainable_groups",
    "validation_psnr",
    "write_history",
]
