"""
Joint search of weights, channel masks and block paths.

Every step runs the supernet, scores it with ``MAE + gamma * max(0, v_N - v_T)``
and takes one Adam step. The speed model only supplies gradients; its weights
never change. With ``out_dir`` set, ``last.npz`` holds the supernet, the Adam
moments and the history after every epoch so an interrupted run can resume.
"""

import logging
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from attrs import evolve
from dataeval import PatchPair
from diffcore import Adam, Tensor, mae_loss
from humanfriendly import format_timespan
from speedmodel import SpeedMLP
from srnet import (
    CheckpointError,
    SupernetModel,
    load_checkpoint,
    model_forward,
    save_checkpoint,
    snapshot_architecture,
    supernet_arrays,
    supernet_meta,
)

from .config import SearchConfig, TrainState
from .loader import Batch, PatchLoader
from .loss import speed_loss, total_loss

STATE_FILE = "last.npz"
_ADAM_PREFIX = "adam."
_LOGGER = logging.LoggerAdapter(logging.getLogger(__name__), {})

History = list[dict[str, Any]]


class SearchError(RuntimeError):
    """A search that cannot start or cannot continue."""


def trainable_groups(model: SupernetModel, mode: str) -> dict[str, list[Tensor]]:
    """
    Parameter groups the search updates in ``mode``. Frozen masks and alphas
    stop recording gradients; with frozen alphas every block takes the block path.
    """
    groups = {"weights": model.parameters("weights")}
    if mode in ("both", "width"):
        groups["masks"] = model.parameters("masks")
    else:
        for param in model.parameters("masks"):
            param.requires_grad = False
    if mode in ("both", "depth"):
        groups["alphas"] = model.parameters("alphas")
    else:
        for blk in model.blocks:
            blk.alpha_s.data = np.zeros_like(blk.alpha_s.data)
            blk.alpha_b.data = np.ones_like(blk.alpha_b.data)
            blk.alpha_s.requires_grad = blk.alpha_b.requires_grad = False
    return groups


def make_optimizer(model: SupernetModel, cfg: SearchConfig) -> Adam:
    groups = trainable_groups(model, cfg.mode)
    lrs = {name: cfg.lr if name == "weights" else cfg.architecture_lr for name in groups}
    return Adam(groups, lr=lrs, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)


def check_speed_caps(
    model: SupernetModel,
    speed: SpeedMLP,
    logger: logging.LoggerAdapter = _LOGGER,
) -> None:
    widest = np.array([model.trunk_width, *model.widths, model.trunk_width], dtype=np.float64)
    if widest.size != speed.arity:
        raise SearchError(f"Speed model takes {speed.arity} widths, blocks have {widest.size}")
    over = widest > np.asarray(speed.norm.divisors)
    if over.any():
        logger.warning(
            f"Block widths {tuple(widest.astype(int))} exceed the speed model caps {speed.norm.divisors}; "
            "predictions for wide blocks are clamped"
        )


def search_step(
    batch: Batch,
    model: SupernetModel,
    speed: SpeedMLP,
    cfg: SearchConfig,
    optimizer: Adam,
    state: TrainState,
    logger: logging.LoggerAdapter = _LOGGER,
) -> TrainState:
    """One forward, one backward and one Adam step; returns the advanced state."""
    lr, hr = batch
    optimizer.zero_grad()
    sr, v_n = model_forward(Tensor(lr), model, speed)
    l_sr = mae_loss(sr, hr)
    l_spd = speed_loss(v_n, cfg.v_t)
    loss = total_loss(l_sr, l_spd, cfg.gamma)
    if not np.isfinite(loss.item()):
        logger.error(
            f"Loss became {loss.item()} at epoch {state.epoch} step {state.step + 1}: "
            f"L_SR={l_sr.item()}, L_SPD={l_spd.item()}, v_N={v_n.item()}"
        )
        raise SearchError(f"Non-finite loss at epoch {state.epoch} step {state.step + 1}")
    loss.backward()
    optimizer.step()
    return evolve(
        state,
        step=state.step + 1,
        lr=optimizer.lr("weights"),
        l_sr=l_sr.item(),
        l_spd=l_spd.item(),
        l_total=loss.item(),
        v_n=v_n.item(),
    )


def _warmup(
    model: SupernetModel,
    speed: SpeedMLP,
    cfg: SearchConfig,
    loader: PatchLoader,
    logger: logging.LoggerAdapter,
) -> None:
    optimizer = Adam(
        {"weights": model.parameters("weights")}, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps
    )
    warm_cfg = evolve(cfg, gamma=0.0)
    state = TrainState()
    for epoch in range(1, cfg.warmup_epochs + 1):
        for batch in loader.epoch(epoch, stream=1):
            state = search_step(batch, model, speed, warm_cfg, optimizer, state, logger)
        logger.info(f"Warm-up epoch {epoch}/{cfg.warmup_epochs}: L_SR {state.l_sr:.4f}")


def save_search_state(
    path: Path,
    model: SupernetModel,
    optimizer: Adam,
    cfg: SearchConfig,
    epoch: int,
    history: History,
) -> None:
    arrays = {
        **supernet_arrays(model),
        **{f"{_ADAM_PREFIX}{name}": value for name, value in optimizer.state_dict().items()},
    }
    meta = {**supernet_meta(model), "epoch": epoch, "mode": cfg.mode, "seed": cfg.seed, "history": history}
    save_checkpoint(path, arrays, "search-state", meta)


def load_search_state(path: Path, model: SupernetModel, optimizer: Adam, cfg: SearchConfig) -> tuple[int, History]:
    """Restore ``model`` and ``optimizer`` in place; returns the stored epoch and history."""
    arrays, meta = load_checkpoint(path, "search-state")
    if meta.get("mode") != cfg.mode:
        raise CheckpointError(f"{path} was written by a '{meta.get('mode')}' search, not '{cfg.mode}'")
    if {key: meta.get(key) for key in supernet_meta(model)} != supernet_meta(model):
        raise CheckpointError(f"{path} holds a supernet of a different shape")
    for name, param in model.named_parameters():
        if name not in arrays or arrays[name].shape != param.shape:
            raise CheckpointError(f"{path} has no matching array for '{name}'")
        param.data = np.array(arrays[name])
    optimizer.load_state_dict(
        {name[len(_ADAM_PREFIX) :]: value for name, value in arrays.items() if name.startswith(_ADAM_PREFIX)}
    )
    return int(meta["epoch"]), list(meta.get("history", []))


def run_search(
    pairs: Sequence[PatchPair],
    model: SupernetModel,
    speed: SpeedMLP,
    cfg: SearchConfig,
    out_dir: Path | None = None,
    resume: bool = False,
    logger: logging.LoggerAdapter = _LOGGER,
) -> tuple[SupernetModel, History]:
    """
    ``cfg.search_epochs`` epochs of ``search_step`` over ``pairs``.

    Each history row holds the epoch means of the losses, the predicted
    latency and the active block count of the architecture at epoch end, and
    the per-block widths.
    """
    if not pairs:
        logger.error("No training patches")
        raise SearchError("Cannot search on an empty dataset")
    speed.freeze()
    check_speed_caps(model, speed, logger)
    loader = PatchLoader(pairs, cfg.batch_size, cfg.seed)
    optimizer = make_optimizer(model, cfg)

    start_epoch, history = 0, []
    state_path = None if out_dir is None else Path(out_dir) / STATE_FILE
    if resume and state_path is not None and state_path.exists():
        start_epoch, history = load_search_state(state_path, model, optimizer, cfg)
        logger.info(f"Resuming search after epoch {start_epoch}")
    elif cfg.warmup_epochs:
        _warmup(model, speed, cfg, loader, logger)

    state = TrainState(epoch=start_epoch, lr=optimizer.lr("weights"))
    initial = snapshot_architecture(model, speed)
    logger.info(f"Search starts at predicted {initial.v_n:.3f} ms with {initial.active_blocks} active blocks")
    for epoch in range(start_epoch + 1, cfg.search_epochs + 1):
        if epoch in cfg.lr_halve_epochs:
            optimizer.scale_lr(0.5)
        state = evolve(state, epoch=epoch)
        started = time.perf_counter()
        sums = np.zeros(3)
        steps = 0
        clamped = speed.clamped_calls
        for batch in loader.epoch(epoch):
            state = search_step(batch, model, speed, cfg, optimizer, state, logger)
            sums += (state.l_sr, state.l_spd, state.l_total)
            steps += 1
            logger.debug(f"Step {state.step}: L={state.l_total:.5f} v_N={state.v_n:.3f}")
        if speed.clamped_calls > clamped:
            logger.warning(
                f"Epoch {epoch}: {speed.clamped_calls - clamped} block predictions clamped widths "
                f"to the speed model caps {speed.norm.divisors}"
            )
        snapshot = snapshot_architecture(model, speed)
        state = evolve(state, snapshot=snapshot)
        means = sums / steps
        history.append(
            {
                "epoch": epoch,
                "l_sr": float(means[0]),
                "l_spd": float(means[1]),
                "l_total": float(means[2]),
                "v_n": snapshot.v_n,
                "active_blocks": snapshot.active_blocks,
                **snapshot.row(),
            }
        )
        logger.info(
            f"Epoch {epoch}/{cfg.search_epochs} in {format_timespan(time.perf_counter() - started)}: "
            f"L_SR {means[0]:.4f}, L_SPD {means[1]:.3f}, v_N {snapshot.v_n:.3f} ms, "
            f"{snapshot.active_blocks}/{len(model.blocks)} blocks"
        )
        if state_path is not None:
            save_search_state(state_path, model, optimizer, cfg, epoch, history)
    return model, history
