"""Compact deployment form of a searched supernet."""

import logging
from math import ceil
from typing import Iterator, Sequence

import numpy as np
from attrs import define, field
from diffcore import Tensor, add, conv2d, pixel_shuffle, relu, scatter_channels

from .model import BLOCK_DEPTH, AdaptiveSRBlock, ConvLayer, SupernetModel

_LOGGER = logging.LoggerAdapter(logging.getLogger(__name__), {})


@define(eq=False)
class CompactBlock:
    """
    Pruned residual block. conv3 writes only its surviving channels, which are
    scattered back into the trunk at ``index`` before the residual add.
    """

    convs: list[ConvLayer]
    index: np.ndarray = field(converter=lambda value: np.asarray(value, dtype=np.intp))
    trunk_width: int
    source: int = -1

    def __attrs_post_init__(self) -> None:
        if len(self.convs) != BLOCK_DEPTH:
            raise ValueError(f"Compact block needs {BLOCK_DEPTH} convs, got {len(self.convs)}")
        if self.convs[-1].out_channels != self.index.size:
            raise ValueError(
                f"conv{BLOCK_DEPTH} writes {self.convs[-1].out_channels} channels for {self.index.size} indices"
            )

    def widths(self) -> tuple[int, ...]:
        return (self.trunk_width, *(conv.out_channels for conv in self.convs))

    def forward(self, x: Tensor) -> Tensor:
        h = relu(conv2d(x, self.convs[0].weight, self.convs[0].bias))
        h = conv2d(h, self.convs[1].weight, self.convs[1].bias)
        h = conv2d(h, self.convs[2].weight, self.convs[2].bias)
        return add(x, scatter_channels(h, self.index, self.trunk_width))


@define(eq=False)
class CompactModel:
    """Head, the kept pruned blocks, tail and skip branch."""

    head: ConvLayer
    blocks: list[CompactBlock]
    tail: ConvLayer
    skip: ConvLayer
    scale: int
    trunk_width: int

    def forward(self, lr: Tensor) -> Tensor:
        features = conv2d(lr, self.head.weight, self.head.bias)
        for block in self.blocks:
            features = block.forward(features)
        body = pixel_shuffle(conv2d(features, self.tail.weight, self.tail.bias), self.scale)
        skip = pixel_shuffle(conv2d(lr, self.skip.weight, self.skip.bias), self.scale)
        return add(body, skip)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for name, conv in (("head", self.head), ("tail", self.tail), ("skip", self.skip)):
            yield f"{name}.weight", conv.weight
            yield f"{name}.bias", conv.bias
        for n, block in enumerate(self.blocks):
            for idx, conv in enumerate(block.convs):
                yield f"blocks.{n}.convs.{idx}.weight", conv.weight
                yield f"blocks.{n}.convs.{idx}.bias", conv.bias

    def parameters(self) -> list[Tensor]:
        return [param for _, param in self.named_parameters()]

    def param_count(self) -> int:
        return sum(param.data.size for param in self.parameters())

    def macs(self, height: int, width: int) -> int:
        """Multiply-accumulates of one forward pass on an ``height x width`` input."""
        convs = [self.head, self.tail, self.skip, *(conv for block in self.blocks for conv in block.convs)]
        return sum(conv.out_channels * conv.in_channels * conv.kernel**2 for conv in convs) * height * width

    def widths(self) -> list[tuple[int, ...]]:
        return [block.widths() for block in self.blocks]


def _copy(conv: ConvLayer, rows: np.ndarray | None = None, cols: np.ndarray | None = None) -> ConvLayer:
    weight = conv.weight.data
    bias = conv.bias.data
    if rows is not None:
        weight, bias = weight[rows], bias[rows]
    if cols is not None:
        weight = weight[:, cols]
    return ConvLayer(
        weight=Tensor(np.array(weight), requires_grad=True),
        bias=Tensor(np.array(bias), requires_grad=True),
    )


def _prune_block(blk: AdaptiveSRBlock, kept: Sequence[np.ndarray], source: int) -> CompactBlock:
    convs = [_copy(blk.block.convs[0], rows=kept[0])]
    for idx in range(1, BLOCK_DEPTH):
        convs.append(_copy(blk.block.convs[idx], rows=kept[idx], cols=kept[idx - 1]))
    return CompactBlock(convs=convs, index=kept[-1], trunk_width=blk.block.trunk_width, source=source)


def _assemble(model: SupernetModel, blocks: list[CompactBlock]) -> CompactModel:
    return CompactModel(
        head=_copy(model.head),
        blocks=blocks,
        tail=_copy(model.tail),
        skip=_copy(model.skip),
        scale=model.scale,
        trunk_width=model.trunk_width,
    )


def extract_architecture(model: SupernetModel, logger: logging.LoggerAdapter = _LOGGER) -> CompactModel:
    """
    Materialize the searched network: skipped blocks are removed, masked
    channels are cut from conv outputs and from the next conv's inputs.

    A block whose final conv keeps no channel adds nothing to the trunk and is
    dropped as well. Weights are copied, never retrained.
    """
    blocks = []
    for n, blk in enumerate(model.blocks):
        if not blk.active:
            logger.debug(f"Block {n} takes the skip path")
            continue
        kept = [mask.kept() for mask in blk.block.masks]
        if kept[-1].size == 0:
            logger.info(f"Block {n} keeps no output channel, converting it to a skipped block")
            continue
        blocks.append(_prune_block(blk, kept, n))
        logger.debug(f"Block {n} widths {blocks[-1].widths()}")
    logger.info(f"Extracted {len(blocks)} of {len(model.blocks)} blocks")
    return _assemble(model, blocks)


def heuristic_architecture(model: SupernetModel, keep_blocks: int, width_ratio: float) -> CompactModel:
    """
    Hand-designed baseline: the first ``keep_blocks`` blocks, each expansion
    conv cut to ``ceil(width_ratio * width)`` channels with the largest mask
    values. conv3 keeps the full trunk.
    """
    if not 0 < width_ratio <= 1:
        raise ValueError(f"width_ratio must be in (0, 1], got {width_ratio}")
    if not 0 <= keep_blocks <= len(model.blocks):
        raise ValueError(f"keep_blocks must be in [0, {len(model.blocks)}], got {keep_blocks}")
    blocks = []
    for n, blk in enumerate(model.blocks[:keep_blocks]):
        kept = []
        for conv in blk.block.convs[:-1]:
            count = ceil(width_ratio * conv.out_channels)
            strongest = np.argsort(-conv.mask.m.data, kind="stable")[:count]
            kept.append(np.sort(strongest))
        kept.append(np.arange(blk.block.trunk_width))
        blocks.append(_prune_block(blk, kept, n))
    return _assemble(model, blocks)
