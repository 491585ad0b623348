"""Searchable SR network: masked convs, masked blocks, adaptive blocks and the supernet."""

from typing import Iterator, Literal, Protocol, Sequence

import numpy as np
from attrs import define, field
from diffcore import KERNEL_SIZES, Tensor

ParamGroup = Literal["weights", "masks", "alphas"]
BLOCK_DEPTH = 3


class LatencyPredictor(Protocol):
    """Anything that maps an (L+1,) width vector to a scalar latency tensor."""

    def predict(self, widths: Tensor) -> Tensor: ...


def _kaiming(rng: np.random.Generator, shape: tuple[int, ...], gain: float, dtype) -> np.ndarray:
    fan_in = int(np.prod(shape[1:])) or 1
    return (rng.standard_normal(shape) * gain * np.sqrt(2.0 / fan_in)).astype(dtype)


@define(eq=False)
class ConvLayer:
    """Plain convolution parameters (head, tail, skip and compact convs)."""

    weight: Tensor
    bias: Tensor

    @property
    def kernel(self) -> int:
        return self.weight.shape[-1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def build(
        cls,
        rng: np.random.Generator,
        out_channels: int,
        in_channels: int,
        kernel: int,
        gain: float = 1.0,
        dtype=np.float64,
    ) -> "ConvLayer":
        if kernel not in KERNEL_SIZES:
            raise ValueError(f"Kernel size {kernel} not in {KERNEL_SIZES}")
        if out_channels < 1 or in_channels < 1:
            raise ValueError(f"Conv needs at least one channel, got {out_channels}x{in_channels}")
        return cls(
            weight=Tensor(
                _kaiming(rng, (out_channels, in_channels, kernel, kernel), gain, dtype),
                requires_grad=True,
            ),
            bias=Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True),
        )


@define(eq=False)
class MaskLayer:
    """Trainable real mask ``m`` whose thresholded view gates output channels."""

    m: Tensor
    thres: float = 0.5

    @property
    def channels(self) -> int:
        return self.m.shape[0]

    def binary(self) -> np.ndarray:
        return binarize_mask(self.m.data, self.thres)

    def kept(self) -> np.ndarray:
        return np.flatnonzero(self.binary())

    @classmethod
    def build(
        cls,
        rng: np.random.Generator,
        channels: int,
        thres: float = 0.5,
        init: tuple[float, float] = (0.0, 1.0),
        dtype=np.float64,
    ) -> "MaskLayer":
        low, high = init
        return cls(
            m=Tensor(rng.uniform(low, high, channels).astype(dtype), requires_grad=True),
            thres=thres,
        )


def binarize_mask(m: np.ndarray, thres: float) -> np.ndarray:
    """``b[c] = 1`` iff ``m[c] > thres`` (strict)."""
    values = np.asarray(m)
    dtype = values.dtype if np.issubdtype(values.dtype, np.floating) else np.float64
    return (values > thres).astype(dtype)


@define(eq=False)
class MaskedConv(ConvLayer):
    mask: MaskLayer = field(kw_only=True)


@define(eq=False)
class MaskedSRBlock:
    """
    WDSR-style residual block with a mask after each of its three convs.

    conv1 expands the trunk, ReLU follows conv1 only, conv3 maps back to the
    trunk width so the residual add always matches.
    """

    convs: list[MaskedConv]
    trunk_width: int

    def __attrs_post_init__(self) -> None:
        if len(self.convs) != BLOCK_DEPTH:
            raise ValueError(f"Masked block needs {BLOCK_DEPTH} convs, got {len(self.convs)}")
        expected = self.trunk_width
        for idx, conv in enumerate(self.convs):
            if conv.in_channels != expected:
                raise ValueError(f"conv{idx + 1} expects {expected} inputs, has {conv.in_channels}")
            if conv.mask.channels != conv.out_channels:
                raise ValueError(f"mask{idx + 1} length {conv.mask.channels} != {conv.out_channels} channels")
            expected = conv.out_channels
        if expected != self.trunk_width:
            raise ValueError(f"conv{BLOCK_DEPTH} must write {self.trunk_width} trunk channels, writes {expected}")

    @property
    def masks(self) -> list[MaskLayer]:
        return [conv.mask for conv in self.convs]

    def widths(self) -> tuple[int, ...]:
        """Integer effective widths ``(f1, ..., f_{L+1})`` under the current masks."""
        return (self.trunk_width, *(int(conv.mask.binary().sum()) for conv in self.convs))

    @classmethod
    def build(
        cls,
        rng: np.random.Generator,
        trunk_width: int,
        widths: Sequence[int],
        kernels: Sequence[int] = (1, 1, 3),
        thres: float = 0.5,
        mask_init: tuple[float, float] = (0.0, 1.0),
        dtype=np.float64,
    ) -> "MaskedSRBlock":
        outs = [*widths, trunk_width]
        ins = [trunk_width, *widths]
        convs = []
        for idx, (out_ch, in_ch, k) in enumerate(zip(outs, ins, kernels)):
            layer = ConvLayer.build(rng, out_ch, in_ch, k, gain=0.1 if idx == BLOCK_DEPTH - 1 else 1.0, dtype=dtype)
            convs.append(
                MaskedConv(
                    weight=layer.weight,
                    bias=layer.bias,
                    mask=MaskLayer.build(rng, out_ch, thres, mask_init, dtype),
                )
            )
        return cls(convs=convs, trunk_width=trunk_width)


@define(eq=False)
class AdaptiveSRBlock:
    """Masked block plus the aggregation layer's path scalars."""

    block: MaskedSRBlock
    alpha_s: Tensor
    alpha_b: Tensor

    @property
    def active(self) -> bool:
        """Block path taken (ties go to the block)."""
        return bool(self.alpha_s.item() <= self.alpha_b.item())

    @classmethod
    def build(cls, block: MaskedSRBlock, dtype=np.float64) -> "AdaptiveSRBlock":
        return cls(
            block=block,
            alpha_s=Tensor(np.array(0.0, dtype=dtype), requires_grad=True, name="alpha_s"),
            alpha_b=Tensor(np.array(1.0, dtype=dtype), requires_grad=True, name="alpha_b"),
        )


@define(eq=False)
class SupernetModel:
    """Head, N adaptive blocks, pixel-shuffle tail and a global skip branch."""

    head: ConvLayer
    blocks: list[AdaptiveSRBlock]
    tail: ConvLayer
    skip: ConvLayer
    scale: int
    trunk_width: int
    widths: tuple[int, ...] = field(default=(64, 48), converter=tuple)
    kernels: tuple[int, ...] = field(default=(1, 1, 3), converter=tuple)
    thres: float = 0.5
    v0: float = 0.0

    def __attrs_post_init__(self) -> None:
        if self.scale not in (2, 4):
            raise ValueError(f"Unsupported scale {self.scale}")
        if self.head.in_channels != 3 or self.head.out_channels != self.trunk_width:
            raise ValueError(f"Head must map 3 -> {self.trunk_width} channels")
        for conv, name in ((self.tail, "tail"), (self.skip, "skip")):
            if conv.out_channels != 3 * self.scale**2:
                raise ValueError(f"{name} must produce {3 * self.scale ** 2} channels for scale {self.scale}")

    def parameters(self, group: ParamGroup | None = None) -> list[Tensor]:
        return [param for name, param in self.named_parameters() if group is None or _group_of(name) == group]

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for name, conv in (("head", self.head), ("tail", self.tail), ("skip", self.skip)):
            yield f"{name}.weight", conv.weight
            yield f"{name}.bias", conv.bias
        for n, blk in enumerate(self.blocks):
            for idx, conv in enumerate(blk.block.convs):
                yield f"blocks.{n}.convs.{idx}.weight", conv.weight
                yield f"blocks.{n}.convs.{idx}.bias", conv.bias
                yield f"blocks.{n}.convs.{idx}.mask", conv.mask.m
            yield f"blocks.{n}.alpha_s", blk.alpha_s
            yield f"blocks.{n}.alpha_b", blk.alpha_b

    @classmethod
    def build(
        cls,
        *,
        scale: int = 2,
        blocks: int = 8,
        trunk_width: int = 16,
        widths: Sequence[int] = (64, 48),
        kernels: Sequence[int] = (1, 1, 3),
        thres: float = 0.5,
        v0: float = 0.0,
        skip_kernel: int = 5,
        mask_init: tuple[float, float] = (0.0, 1.0),
        seed: int = 0,
        dtype=np.float64,
    ) -> "SupernetModel":
        if len(widths) != BLOCK_DEPTH - 1 or len(kernels) != BLOCK_DEPTH:
            raise ValueError(f"Need {BLOCK_DEPTH - 1} widths and {BLOCK_DEPTH} kernels, got {widths} / {kernels}")
        rng = np.random.default_rng(seed)
        out = 3 * scale**2
        return cls(
            head=ConvLayer.build(rng, trunk_width, 3, 3, dtype=dtype),
            blocks=[
                AdaptiveSRBlock.build(
                    MaskedSRBlock.build(rng, trunk_width, widths, kernels, thres, tuple(mask_init), dtype),
                    dtype,
                )
                for _ in range(blocks)
            ],
            tail=ConvLayer.build(rng, out, trunk_width, 3, gain=0.1, dtype=dtype),
            skip=ConvLayer.build(rng, out, 3, skip_kernel, gain=0.1, dtype=dtype),
            scale=scale,
            trunk_width=trunk_width,
            widths=tuple(widths),
            kernels=tuple(kernels),
            thres=thres,
            v0=v0,
        )


def _group_of(name: str) -> ParamGroup:
    if name.endswith(".mask"):
        return "masks"
    if ".alpha_" in name:
        return "alphas"
    return "weights"
