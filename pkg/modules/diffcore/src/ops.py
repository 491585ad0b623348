"""Differentiable operations used by the SR supernet and the speed model."""

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, UnsupportedKernelError, as_tensor, record

KERNEL_SIZES = (1, 3, 5)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def conv_forward(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Stride-1 zero-padded convolution that preserves the spatial size."""
    k = w.shape[-1]
    if k == 1:
        out = np.tensordot(x, w[:, :, 0, 0], axes=([1], [1]))
    else:
        pad = (k - 1) // 2
        padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        windows = sliding_window_view(padded, (k, k), axis=(2, 3))
        out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv_weight_grad(x: np.ndarray, grad: np.ndarray, k: int) -> np.ndarray:
    if k == 1:
        return np.tensordot(grad, x, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
    pad = (k - 1) // 2
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(padded, (k, k), axis=(2, 3))
    return np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))


def conv_input_grad(grad: np.ndarray, w: np.ndarray) -> np.ndarray:
    flipped = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    return conv_forward(grad, flipped)


def check_conv(x_shape: tuple[int, ...], w_shape: tuple[int, ...], bias_shape: tuple[int, ...] | None) -> None:
    if len(x_shape) != 4:
        raise ShapeError(f"conv2d input must be rank 4 (B, C, H, W), got {x_shape}")
    if len(w_shape) != 4 or w_shape[2] != w_shape[3]:
        raise ShapeError(f"conv2d weight must be (o, i, k, k), got {w_shape}")
    if w_shape[2] not in KERNEL_SIZES:
        raise UnsupportedKernelError(f"Kernel size {w_shape[2]} not in {KERNEL_SIZES}")
    if x_shape[1] != w_shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input has {x_shape[1]}, weight expects {w_shape[1]}")
    if bias_shape is not None and bias_shape != (w_shape[0],):
        raise ShapeError(f"conv2d bias must be ({w_shape[0]},), got {bias_shape}")


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    check_conv(x.shape, w.shape, None if bias is None else bias.shape)
    out = conv_forward(x.data, w.data)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(grad: np.ndarray):
        grads = [
            conv_input_grad(grad, w.data) if x.requires_grad else None,
            conv_weight_grad(x.data, grad, w.shape[-1]) if w.requires_grad else None,
        ]
        if bias is not None:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, w) if bias is None else (x, w, bias)
    return record(out, parents, backward, "conv2d")


def channel_scale(x: Tensor, scale: Tensor) -> Tensor:
    if x.ndim != 4 or scale.shape != (x.shape[1],):
        raise ShapeError(f"channel_scale needs a ({x.shape[1] if x.ndim == 4 else '?'},) vector, got {scale.shape}")
    factor = scale.data[None, :, None, None]

    def backward(grad: np.ndarray):
        return grad * factor, (grad * x.data).sum(axis=(0, 2, 3))

    return record(x.data * factor, (x, scale), backward, "channel_scale")


def relu(x: Tensor) -> Tensor:
    active = x.data > 0

    def backward(grad: np.ndarray):
        return (grad * active,)

    return record(np.where(active, x.data, 0).astype(x.dtype), (x,), backward, "relu")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add needs identical shapes, got {a.shape} and {b.shape}")

    def backward(grad: np.ndarray):
        return grad, grad

    return record(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub needs identical shapes, got {a.shape} and {b.shape}")

    def backward(grad: np.ndarray):
        return grad, -grad

    return record(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor, b: "Tensor | np.ndarray | float") -> Tensor:
    """Elementwise product with numpy broadcasting."""
    b = as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul cannot broadcast {a.shape} with {b.shape}") from exc

    def backward(grad: np.ndarray):
        return (
            _unbroadcast(grad * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(grad * a.data, b.shape) if b.requires_grad else None,
        )

    return record(out, (a, b), backward, "mul")


def scale(x: Tensor, factor: float) -> Tensor:
    def backward(grad: np.ndarray):
        return (grad * factor,)

    return record(x.data * factor, (x,), backward, "scale")


def shift(x: Tensor, offset: float) -> Tensor:
    def backward(grad: np.ndarray):
        return (grad,)

    return record(x.data + offset, (x,), backward, "shift")


def reduce_sum(x: Tensor) -> Tensor:
    def backward(grad: np.ndarray):
        return (np.broadcast_to(grad, x.shape).copy(),)

    return record(np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward, "sum")


def mean(x: Tensor) -> Tensor:
    count = x.data.size

    def backward(grad: np.ndarray):
        return (np.full(x.shape, grad / count, dtype=x.dtype),)

    return record(np.asarray(x.data.mean(), dtype=x.dtype), (x,), backward, "mean")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"Cannot reshape {x.shape} to {shape}") from exc

    def backward(grad: np.ndarray):
        return (grad.reshape(x.shape),)

    return record(out, (x,), backward, "reshape")


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Join scalars and vectors into one vector."""
    flat = [part.data.reshape(-1) for part in parts]
    sizes = [f.size for f in flat]
    bounds = np.cumsum([0, *sizes])

    def backward(grad: np.ndarray):
        return [grad[lo:hi].reshape(part.shape) for part, lo, hi in zip(parts, bounds[:-1], bounds[1:])]

    dtype = np.result_type(*(part.dtype for part in parts))
    return record(np.concatenate(flat).astype(dtype), tuple(parts), backward, "concat")


def straight_through(value: np.ndarray, source: Tensor, op: str = "straight_through") -> Tensor:
    """
    Forward ``value``, backward the upstream gradient onto ``source`` unchanged.

    This is the straight-through estimator used for thresholded masks, path
    selection and input clamping.
    """
    value = np.asarray(value, dtype=source.dtype)
    if value.shape != source.shape:
        raise ShapeError(f"straight_through value {value.shape} differs from source {source.shape}")

    def backward(grad: np.ndarray):
        return (grad,)

    return record(value, (source,), backward, op)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Depth-to-space: ``out[b, c, r*i+di, r*j+dj] = in[b, c*r*r + di*r + dj, i, j]``."""
    if x.ndim != 4:
        raise ShapeError(f"pixel_shuffle input must be rank 4, got {x.shape}")
    b, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"pixel_shuffle needs channels divisible by {r * r}, got {c}")
    out = x.data.reshape(b, c // (r * r), r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, c // (r * r), h * r, w * r)

    def backward(grad: np.ndarray):
        return (_space_to_depth(grad, r),)

    return record(np.ascontiguousarray(out), (x,), backward, "pixel_shuffle")


def _space_to_depth(data: np.ndarray, r: int) -> np.ndarray:
    b, c, h, w = data.shape
    out = data.reshape(b, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(out.reshape(b, c * r * r, h // r, w // r))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Space-to-depth, the exact inverse of ``pixel_shuffle``."""
    if x.ndim != 4:
        raise ShapeError(f"pixel_unshuffle input must be rank 4, got {x.shape}")
    if x.shape[2] % r or x.shape[3] % r:
        raise ShapeError(f"pixel_unshuffle needs spatial size divisible by {r}, got {x.shape[2:]}")

    def backward(grad: np.ndarray):
        b, c, h, w = grad.shape
        out = grad.reshape(b, c // (r * r), r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
        return (out.reshape(b, c // (r * r), h * r, w * r),)

    return record(_space_to_depth(x.data, r), (x,), backward, "pixel_unshuffle")


def scatter_channels(x: Tensor, index: Sequence[int], channels: int) -> Tensor:
    """Write the channels of ``x`` into positions ``index`` of a zero tensor."""
    index = np.asarray(index, dtype=np.intp)
    if x.ndim != 4 or x.shape[1] != index.size:
        raise ShapeError(f"scatter_channels got {x.shape} for {index.size} indices")
    if index.size and (index.min() < 0 or index.max() >= channels or np.unique(index).size != index.size):
        raise ShapeError(f"scatter_channels indices must be unique and below {channels}")
    out = np.zeros((x.shape[0], channels, *x.shape[2:]), dtype=x.dtype)
    out[:, index] = x.data

    def backward(grad: np.ndarray):
        return (grad[:, index],)

    return record(out, (x,), backward, "scatter_channels")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear got input {x.shape} for weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear bias must be ({w.shape[0]},), got {b.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def backward(grad: np.ndarray):
        grads = [grad @ w.data, grad.T @ x.data]
        if b is not None:
            grads.append(grad.sum(axis=0))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return record(out, parents, backward, "linear")


def mae_loss(pred: Tensor, target: "Tensor | np.ndarray") -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mae_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    count = diff.size

    def backward(grad: np.ndarray):
        step = np.sign(diff) * (grad / count)
        return step, -step

    return record(np.asarray(np.abs(diff).mean(), dtype=pred.dtype), (pred, target), backward, "mae")


def mse_loss(pred: Tensor, target: "Tensor | np.ndarray") -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    count = diff.size

    def backward(grad: np.ndarray):
        step = diff * (2 * grad / count)
        return step, -step

    return record(np.asarray((diff * diff).mean(), dtype=pred.dtype), (pred, target), backward, "mse")
