"""
Inference-only NumPy kernels for the SR block and the model tail.

The unfused kernels materialize every intermediate. The fused ones write conv
results straight into their consumer: bias and ReLU are applied in place on the
conv1 accumulator, conv3 accumulates on top of the residual input, and the tail
conv writes every output channel directly into its depth-to-space position.
"""

import numpy as np
from diffcore import ShapeError
from diffcore.src.ops import check_conv, conv_forward

from .records import WidthConfig

KERNELS = (1, 1, 3)

BlockWeights = list[tuple[np.ndarray, np.ndarray]]


def block_weights(config: WidthConfig, seed: int = 0, kernels: tuple[int, ...] = KERNELS) -> BlockWeights:
    """Deterministic weights for ``config``; the same config and seed give the same arrays."""
    rng = np.random.default_rng([seed, *config.f])
    weights = []
    for f_in, f_out, k in zip(config.f[:-1], config.f[1:], kernels):
        scale = np.sqrt(2.0 / (f_in * k * k))
        weights.append((rng.standard_normal((f_out, f_in, k, k)) * scale, rng.standard_normal(f_out) * 0.01))
    return weights


def _accumulate(x: np.ndarray, w: np.ndarray, out: np.ndarray) -> np.ndarray:
    """``out += conv(x, w)``, one kernel tap at a time."""
    k = w.shape[-1]
    pad = (k - 1) // 2
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    height, width = x.shape[2:]
    for i in range(k):
        for j in range(k):
            tap = padded[:, :, i : i + height, j : j + width]
            out += np.einsum("oc,bchw->bohw", w[:, :, i, j], tap)
    return out


def _residual(x: np.ndarray, f_out: int) -> np.ndarray:
    # conv3 lands on the first f4 trunk channels; a wider conv3 extends the trunk with zeros
    batch, f_in, height, width = x.shape
    out = np.zeros((batch, max(f_in, f_out), height, width), dtype=x.dtype)
    out[:, :f_in] = x
    return out


def _unfused_block(x: np.ndarray, weights: BlockWeights) -> np.ndarray:
    (w1, b1), (w2, b2), (w3, b3) = weights
    h1 = conv_forward(x, w1) + b1[None, :, None, None]
    a1 = np.maximum(h1, 0)
    h2 = conv_forward(a1, w2) + b2[None, :, None, None]
    h3 = conv_forward(h2, w3) + b3[None, :, None, None]
    out = _residual(x, h3.shape[1])
    out[:, : h3.shape[1]] = out[:, : h3.shape[1]] + h3
    return out


def _fused_block(x: np.ndarray, weights: BlockWeights) -> np.ndarray:
    (w1, b1), (w2, b2), (w3, b3) = weights
    batch, _, height, width = x.shape

    h = np.empty((batch, w1.shape[0], height, width), dtype=x.dtype)
    h[...] = b1[None, :, None, None]
    np.maximum(_accumulate(x, w1, h), 0, out=h)

    h2 = np.empty((batch, w2.shape[0], height, width), dtype=x.dtype)
    h2[...] = b2[None, :, None, None]
    _accumulate(h, w2, h2)

    out = _residual(x, w3.shape[0])
    target = out[:, : w3.shape[0]]
    target += b3[None, :, None, None]
    _accumulate(h2, w3, target)
    return out


def execute_block(
    config: WidthConfig,
    x: np.ndarray,
    fusion: bool = True,
    weights: BlockWeights | None = None,
    seed: int = 0,
) -> np.ndarray:
    """
    conv1 -> ReLU -> conv2 -> conv3 -> residual add for the widths in ``config``.

    The output has ``max(f1, f4)`` channels.
    """
    if x.ndim != 4 or x.shape[1] != config.f[0]:
        raise ShapeError(f"Block input must have {config.f[0]} channels, got {x.shape}")
    weights = block_weights(config, seed) if weights is None else weights
    channels = x.shape[1]
    for w, b in weights:
        check_conv((1, channels, 1, 1), w.shape, b.shape)
        channels = w.shape[0]
    return _fused_block(x, weights) if fusion else _unfused_block(x, weights)


def conv_pixel_shuffle(x: np.ndarray, w: np.ndarray, b: np.ndarray, r: int, fusion: bool = True) -> np.ndarray:
    """Conv followed by depth-to-space by ``r``."""
    check_conv(x.shape, w.shape, b.shape)
    out_channels = w.shape[0]
    if out_channels % (r * r):
        raise ShapeError(f"Depth-to-space needs channels divisible by {r * r}, got {out_channels}")
    batch, _, height, width = x.shape
    channels = out_channels // (r * r)

    if not fusion:
        y = conv_forward(x, w) + b[None, :, None, None]
        y = y.reshape(batch, channels, r, r, height, width).transpose(0, 1, 4, 2, 5, 3)
        return np.ascontiguousarray(y.reshape(batch, channels, height * r, width * r))

    out = np.empty((batch, channels, height * r, width * r), dtype=np.result_type(x, w))
    strided = out.reshape(batch, channels, height, r, width, r)
    for di in range(r):
        for dj in range(r):
            group = slice(di * r + dj, None, r * r)
            strided[:, :, :, di, :, dj] = conv_forward(x, w[group]) + b[group][None, :, None, None]
    return out
