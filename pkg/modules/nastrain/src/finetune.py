"""Weight-only training of an extracted compact model."""

import logging
import time
from typing import Sequence

import numpy as np
from dataeval import PatchPair, psnr, to_batch, to_image
from diffcore import Adam, Tensor, mae_loss, no_grad
from humanfriendly import format_timespan
from srnet import CompactModel

from .config import SearchConfig
from .loader import PatchLoader
from .search import SearchError

_LOGGER = logging.LoggerAdapter(logging.getLogger(__name__), {})


def validation_psnr(compact: CompactModel, pairs: Sequence[PatchPair], batch_size: int = 8) -> float:
    """Mean Y-channel PSNR of ``compact`` over ``pairs``, border shaved by the scale."""
    scores = []
    with no_grad():
        for lo in range(0, len(pairs), batch_size):
            chosen = pairs[lo : lo + batch_size]
            sr = compact.forward(Tensor(to_batch([pair.lr for pair in chosen]))).data
            for pair, out in zip(chosen, sr):
                scores.append(psnr(to_image(out), pair.hr, shave=compact.scale))
    return float(np.mean(scores))


def finetune(
    compact: CompactModel,
    pairs: Sequence[PatchPair],
    cfg: SearchConfig,
    val_pairs: Sequence[PatchPair] | None = None,
    logger: logging.LoggerAdapter = _LOGGER,
) -> CompactModel:
    """
    Train the weights of ``compact`` with MAE for ``cfg.finetune_epochs`` epochs
    and keep the weights with the best validation PSNR (``pairs`` when no
    ``val_pairs`` are given). Zero epochs return ``compact`` untouched.
    """
    if cfg.finetune_epochs == 0:
        return compact
    if not pairs:
        logger.error("No fine-tune patches")
        raise SearchError("Cannot fine-tune on an empty dataset")
    val_pairs = pairs if not val_pairs else val_pairs
    params = compact.parameters()
    optimizer = Adam({"weights": params}, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    loader = PatchLoader(pairs, cfg.batch_size, cfg.seed)

    best_psnr = validation_psnr(compact, val_pairs, cfg.batch_size)
    best = [param.data.copy() for param in params]
    logger.info(f"Fine-tuning {compact.param_count()} weights from {best_psnr:.3f} dB")
    for epoch in range(1, cfg.finetune_epochs + 1):
        if epoch in cfg.finetune_lr_halve_epochs:
            optimizer.scale_lr(0.5)
        started = time.perf_counter()
        losses = []
        for lr, hr in loader.epoch(epoch, stream=2):
            optimizer.zero_grad()
            loss = mae_loss(compact.forward(Tensor(lr)), hr)
            if not np.isfinite(loss.item()):
                logger.error(f"Fine-tune loss became {loss.item()} in epoch {epoch}")
                raise SearchError(f"Non-finite fine-tune loss in epoch {epoch}")
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        score = validation_psnr(compact, val_pairs, cfg.batch_size)
        if score > best_psnr:
            best_psnr = score
            best = [param.data.copy() for param in params]
        logger.info(
            f"Fine-tune epoch {epoch}/{cfg.finetune_epochs} in {format_timespan(time.perf_counter() - started)}: "
            f"L_SR {np.mean(losses):.4f}, validation {score:.3f} dB (best {best_psnr:.3f} dB)"
        )
    for param, data in zip(params, best):
        param.data = data
        param.grad = None
    return compact
