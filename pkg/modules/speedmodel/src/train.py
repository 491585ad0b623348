"""Fitting the speed model to a latency dataset."""

import csv
import logging
import time
from pathlib import Path
from typing import Sequence

import numpy as np
from attrs import define, field
from diffcore import Adam, Tensor, mean, mul, no_grad, reshape, sub
from humanfriendly import format_timespan
from latlab import LatencyDataset

from .mlp import HIDDEN, NormalizationSpec, SpeedMLP, SpeedModelError

MIN_RECORDS = 10
HISTORY_HEADER = ("epoch", "train_loss", "val_mape")
_LOGGER = logging.LoggerAdapter(logging.getLogger(__name__), {})


@define(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_mape: float


@define
class SpeedFit:
    model: SpeedMLP
    train_mape: float
    val_mape: float
    history: list[EpochStats] = field(factory=list)


def relative_mse(pred: Tensor, target: np.ndarray) -> Tensor:
    """``mean(((pred - t) / t)^2)``, the same relative units as the MAPE gate."""
    rel = mul(sub(pred, Tensor(target)), 1.0 / target)
    return mean(mul(rel, rel))


def mape(model: SpeedMLP, x: np.ndarray, target: np.ndarray) -> float:
    with no_grad():
        pred = model.forward(Tensor(x)).data.reshape(-1)
    return float(np.mean(np.abs(pred - target) / target))


def normalization_for(dataset: LatencyDataset) -> NormalizationSpec:
    """Divide widths by the dataset caps (or the largest seen widths) and latencies by their mean."""
    maxima = dataset.meta.get("maxima")
    divisors = maxima if maxima is not None else dataset.widths().max(axis=0)
    return NormalizationSpec(divisors=divisors, latency_scale=float(dataset.targets().mean()))


def train_speed_model(
    dataset: LatencyDataset,
    split: float = 0.9,
    epochs: int = 400,
    lr: float = 1e-3,
    seed: int = 0,
    batch_size: int = 0,
    lr_halve_epochs: Sequence[int] = (),
    hidden: Sequence[int] = HIDDEN,
    logger: logging.LoggerAdapter = _LOGGER,
) -> SpeedFit:
    """
    Fit a ``SpeedMLP`` with Adam on a seeded ``split`` of ``dataset``.

    ``batch_size=0`` trains full-batch. The learning rate is halved at the start
    of every epoch listed in ``lr_halve_epochs`` (1-based).
    """
    if len(dataset) < MIN_RECORDS:
        raise SpeedModelError(f"Need at least {MIN_RECORDS} records, got {len(dataset)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    n_train = int(round(split * len(dataset)))
    if n_train == 0 or n_train == len(dataset):
        raise SpeedModelError(f"Split {split} leaves an empty partition of {len(dataset)} records")

    norm = normalization_for(dataset)
    x = dataset.widths() / np.asarray(norm.divisors)
    t = dataset.targets()
    train_idx, val_idx = order[:n_train], order[n_train:]
    model = SpeedMLP.build(norm, hidden, seed)
    optimizer = Adam({"weights": model.parameters()}, lr=lr)
    batch = n_train if batch_size <= 0 else min(batch_size, n_train)

    history = []
    start = time.perf_counter()
    for epoch in range(1, epochs + 1):
        if epoch in lr_halve_epochs:
            optimizer.scale_lr(0.5)
        shuffled = train_idx[rng.permutation(n_train)]
        losses = []
        for lo in range(0, n_train, batch):
            idx = shuffled[lo : lo + batch]
            optimizer.zero_grad()
            loss = relative_mse(reshape(model.forward(Tensor(x[idx])), (idx.size,)), t[idx])
            if not np.isfinite(loss.item()):
                logger.error(f"Speed model loss became {loss.item()} in epoch {epoch}")
                raise SpeedModelError(f"Training diverged in epoch {epoch}")
            loss.backward()
            optimizer.step()
            losses.append(loss.item() * idx.size)
        stats = EpochStats(epoch=epoch, train_loss=sum(losses) / n_train, val_mape=mape(model, x[val_idx], t[val_idx]))
        history.append(stats)
        if epoch % 50 == 0 or epoch == epochs:
            logger.info(f"Epoch {epoch}/{epochs}: loss {stats.train_loss:.3e}, val MAPE {stats.val_mape:.2%}")

    fit = SpeedFit(
        model=model,
        train_mape=mape(model, x[train_idx], t[train_idx]),
        val_mape=mape(model, x[val_idx], t[val_idx]),
        history=history,
    )
    logger.info(
        f"Fitted speed model in {format_timespan(time.perf_counter() - start)}: "
        f"train MAPE {fit.train_mape:.2%}, val MAPE {fit.val_mape:.2%}"
    )
    return fit


def write_history(history: Sequence[EpochStats], path: Path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(HISTORY_HEADER)
        for stats in history:
            writer.writerow([stats.epoch, repr(stats.train_loss), repr(stats.val_mape)])
