"""Supernet forward pass: masked convs, path selection and latency accumulation."""

from typing import Sequence

import numpy as np
from attrs import define
from diffcore import (
    ShapeError,
    Tensor,
    add,
    channel_scale,
    concat,
    conv2d,
    mul,
    no_grad,
    pixel_shuffle,
    reduce_sum,
    relu,
    straight_through,
)

from .model import AdaptiveSRBlock, LatencyPredictor, MaskedConv, MaskedSRBlock, MaskLayer, SupernetModel, binarize_mask


@define
class BlockTrace:
    """What one adaptive block did during a forward pass."""

    widths: tuple[int, ...]
    active: bool
    v_c: float


def binarize(mask: MaskLayer) -> Tensor:
    """Binary view of ``mask`` whose gradient lands on ``mask.m`` unchanged."""
    return straight_through(binarize_mask(mask.m.data, mask.thres), mask.m, op="binarize")


def masked_conv_forward(x: Tensor, conv: MaskedConv, b: Tensor | None = None) -> Tensor:
    return channel_scale(conv2d(x, conv.weight, conv.bias), binarize(conv.mask) if b is None else b)


def block_forward(x: Tensor, block: MaskedSRBlock, binaries: Sequence[Tensor] | None = None) -> Tensor:
    b1, b2, b3 = binaries if binaries is not None else [binarize(mask) for mask in block.masks]
    h = relu(masked_conv_forward(x, block.convs[0], b1))
    h = masked_conv_forward(h, block.convs[1], b2)
    h = masked_conv_forward(h, block.convs[2], b3)
    return add(x, h)


def select_path(alpha_s: Tensor | float, alpha_b: Tensor | float) -> tuple[Tensor, Tensor]:
    """
    Indicators ``(beta_s, beta_b)``: the block path wins when ``alpha_s <= alpha_b``.

    Each indicator passes its gradient straight to its own alpha.
    """
    alpha_s = alpha_s if isinstance(alpha_s, Tensor) else Tensor(np.array(float(alpha_s)))
    alpha_b = alpha_b if isinstance(alpha_b, Tensor) else Tensor(np.array(float(alpha_b)))
    take_block = alpha_s.item() <= alpha_b.item()
    beta_s = straight_through(np.array(0.0 if take_block else 1.0), alpha_s, op="select_path")
    beta_b = straight_through(np.array(1.0 if take_block else 0.0), alpha_b, op="select_path")
    return beta_s, beta_b


def effective_widths(block: MaskedSRBlock, binaries: Sequence[Tensor] | None = None) -> Tensor:
    """
    ``(f1, ..., f_{L+1})``: the trunk width followed by the number of live
    channels after each mask. Each count is a sum of binarized entries, so its
    gradient reaches every mask element with weight 1.
    """
    binaries = binaries if binaries is not None else [binarize(mask) for mask in block.masks]
    dtype = block.convs[0].weight.dtype
    return concat([Tensor(np.array(block.trunk_width, dtype=dtype)), *(reduce_sum(b) for b in binaries)])


def adaptive_block_forward(
    a_prev: Tensor,
    v_prev: Tensor | float,
    blk: AdaptiveSRBlock,
    speed: LatencyPredictor,
    trace: list[BlockTrace] | None = None,
) -> tuple[Tensor, Tensor]:
    """``a_n = beta_s*a_prev + beta_b*block(a_prev)`` and ``v_n = v_prev + beta_b*v_c``."""
    if a_prev.ndim != 4 or a_prev.shape[1] != blk.block.trunk_width:
        raise ShapeError(f"Adaptive block expects {blk.block.trunk_width} trunk channels, got {a_prev.shape}")
    if not isinstance(v_prev, Tensor):
        v_prev = Tensor(np.array(v_prev, dtype=a_prev.dtype))

    binaries = [binarize(mask) for mask in blk.block.masks]
    widths = effective_widths(blk.block, binaries)
    v_c = speed.predict(widths)
    beta_s, beta_b = select_path(blk.alpha_s, blk.alpha_b)
    out = block_forward(a_prev, blk.block, binaries)

    if trace is not None:
        trace.append(
            BlockTrace(
                widths=tuple(int(w) for w in widths.data),
                active=bool(beta_b.item()),
                v_c=v_c.item(),
            )
        )
    return add(mul(beta_s, a_prev), mul(beta_b, out)), add(v_prev, mul(beta_b, v_c))


def model_forward(
    lr: Tensor,
    model: SupernetModel,
    speed: LatencyPredictor,
    trace: list[BlockTrace] | None = None,
) -> tuple[Tensor, Tensor]:
    """SR output of shape ``(B, 3, rH, rW)`` and the accumulated predicted latency."""
    if lr.ndim != 4 or lr.shape[1] != 3:
        raise ShapeError(f"Model input must be (B, 3, H, W), got {lr.shape}")
    features = conv2d(lr, model.head.weight, model.head.bias)
    v = Tensor(np.array(model.v0, dtype=lr.dtype))
    for blk in model.blocks:
        features, v = adaptive_block_forward(features, v, blk, speed, trace)
    body = pixel_shuffle(conv2d(features, model.tail.weight, model.tail.bias), model.scale)
    skip = pixel_shuffle(conv2d(lr, model.skip.weight, model.skip.bias), model.scale)
    return add(body, skip), v


@define
class ArchitectureSnapshot:
    """Per-block widths and path choice of a supernet, with its predicted latency."""

    blocks: list[BlockTrace]
    v_n: float

    @property
    def active_blocks(self) -> int:
        return sum(trace.active for trace in self.blocks)

    def row(self) -> dict[str, float | int]:
        """Flat history columns ``b{n}_f2, b{n}_f3, b{n}_f4, b{n}_active``."""
        row: dict[str, float | int] = {}
        for n, trace in enumerate(self.blocks):
            for idx, width in enumerate(trace.widths[1:], start=2):
                row[f"b{n}_f{idx}"] = width
            row[f"b{n}_active"] = int(trace.active)
        return row


def snapshot_architecture(model: SupernetModel, speed: LatencyPredictor) -> ArchitectureSnapshot:
    """Read the current architecture without running any image through the model."""
    traces = []
    v_n = model.v0
    with no_grad():
        for blk in model.blocks:
            widths = effective_widths(blk.block)
            v_c = speed.predict(widths).item()
            traces.append(BlockTrace(widths=tuple(int(w) for w in widths.data), active=blk.active, v_c=v_c))
            if blk.active:
                v_n += v_c
    return ArchitectureSnapshot(blocks=traces, v_n=float(v_n))
