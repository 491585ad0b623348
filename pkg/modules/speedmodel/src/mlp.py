"""Fully-connected latency predictor, differentiable in its width inputs."""

from pathlib import Path
from typing import Any, Sequence

import numpy as np
from attrs import define, field
from diffcore import Tensor, linear, mul, relu, reshape, scale, straight_through, zero_grad
from srnet import CheckpointError, load_checkpoint, save_checkpoint

HIDDEN = (64, 128, 128, 64, 32)


class SpeedModelError(ValueError):
    """Invalid input, training data or training run of a speed model."""


def _positive(_: Any, attribute: Any, value: Sequence[float] | float) -> None:
    values = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if not (values > 0).all():
        raise ValueError(f"{attribute.name} must be positive, got {value}")


@define(frozen=True)
class NormalizationSpec:
    """Per-input divisors (the width caps) and the ms scale of the raw output."""

    divisors: tuple[float, ...] = field(converter=lambda v: tuple(float(x) for x in v), validator=_positive)
    latency_scale: float = field(default=1.0, converter=float, validator=_positive)


@define(eq=False)
class SpeedMLP:
    """ReLU network ``4 -> 64 -> 128 -> 128 -> 64 -> 32 -> 1`` predicting per-block ms."""

    layers: list[tuple[Tensor, Tensor]]
    norm: NormalizationSpec
    last_clamped: np.ndarray | None = field(default=None, init=False)
    clamped_calls: int = field(default=0, init=False)

    def __attrs_post_init__(self) -> None:
        if self.layers[0][0].shape[1] != len(self.norm.divisors):
            raise SpeedModelError(
                f"First layer takes {self.layers[0][0].shape[1]} inputs, normalization has {len(self.norm.divisors)}"
            )
        if self.layers[-1][0].shape[0] != 1:
            raise SpeedModelError("Last layer must produce one output")

    @property
    def arity(self) -> int:
        return len(self.norm.divisors)

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(weight.shape[0] for weight, _ in self.layers[:-1])

    def parameters(self) -> list[Tensor]:
        return [param for layer in self.layers for param in layer]

    def freeze(self) -> "SpeedMLP":
        """Stop recording gradients for the weights; inputs still get theirs."""
        for param in self.parameters():
            param.requires_grad = False
            param.grad = None
        return self

    def forward(self, x: Tensor) -> Tensor:
        """Raw-ms predictions ``(n, 1)`` for normalized inputs ``(n, arity)``."""
        h = x
        for idx, (weight, bias) in enumerate(self.layers):
            h = linear(h, weight, bias)
            if idx < len(self.layers) - 1:
                h = relu(h)
        return scale(h, self.norm.latency_scale)

    def predict(self, widths: Tensor) -> Tensor:
        """
        Scalar ms for one width vector. Entries above their cap are clamped to it,
        flagged in ``last_clamped`` and counted in ``clamped_calls``.
        """
        if widths.shape != (self.arity,):
            raise SpeedModelError(f"Speed model takes {self.arity} widths, got shape {widths.shape}")
        divisors = np.asarray(self.norm.divisors, dtype=widths.dtype)
        self.last_clamped = widths.data > divisors
        if self.last_clamped.any():
            self.clamped_calls += 1
            widths = straight_through(np.minimum(widths.data, divisors), widths, op="clamp")
        normalized = reshape(mul(widths, 1.0 / divisors), (1, self.arity))
        return reshape(self.forward(normalized), ())

    @classmethod
    def build(cls, norm: NormalizationSpec, hidden: Sequence[int] = HIDDEN, seed: int = 0) -> "SpeedMLP":
        rng = np.random.default_rng(seed)
        sizes = [len(norm.divisors), *hidden, 1]
        layers = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weight = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
            layers.append(
                (
                    Tensor(weight, requires_grad=True),
                    Tensor(np.zeros(fan_out), requires_grad=True),
                )
            )
        return cls(layers=layers, norm=norm)


def predict(model: SpeedMLP, widths: "Tensor | Sequence[float] | np.ndarray") -> Tensor:
    if not isinstance(widths, Tensor):
        widths = Tensor(np.asarray(widths, dtype=np.float64))
    return model.predict(widths)


def grad_wrt_widths(model: SpeedMLP, widths: Sequence[float] | np.ndarray) -> np.ndarray:
    """``d predict / d widths`` at ``widths``; the model's own gradients are left cleared."""
    point = Tensor(np.asarray(widths, dtype=np.float64), requires_grad=True)
    model.predict(point).backward()
    zero_grad(model.parameters())
    return point.grad if point.grad is not None else np.zeros_like(point.data)


def monotone_agreement(model: SpeedMLP, pairs: Sequence[tuple[Sequence[float], Sequence[float]]]) -> float:
    """Fraction of nested pairs ``(a <= b)`` whose predictions are ordered the same way."""
    if not pairs:
        raise SpeedModelError("No pairs to compare")
    ordered = sum(predict(model, a).item() <= predict(model, b).item() for a, b in pairs)
    return ordered / len(pairs)


def nested_pairs(widths: np.ndarray, n: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """``n`` pairs ``(a, b)`` with ``b`` drawn from ``widths`` and ``1 <= a <= b`` elementwise."""
    rng = np.random.default_rng(seed)
    pairs = []
    for row in rng.integers(0, len(widths), size=n):
        upper = np.asarray(widths[row], dtype=np.float64)
        lower = np.floor(rng.uniform(1, upper + 1))
        pairs.append((lower, upper))
    return pairs


def layer_arrays(model: SpeedMLP) -> dict[str, np.ndarray]:
    arrays = {}
    for idx, (weight, bias) in enumerate(model.layers):
        arrays[f"layers.{idx}.weight"] = weight.data
        arrays[f"layers.{idx}.bias"] = bias.data
    return arrays


def save(path: Path, model: SpeedMLP) -> None:
    meta = {
        "hidden": list(model.hidden),
        "divisors": list(model.norm.divisors),
        "latency_scale": model.norm.latency_scale,
    }
    save_checkpoint(path, layer_arrays(model), "speed", meta)


def load(path: Path) -> SpeedMLP:
    arrays, meta = load_checkpoint(path, "speed")
    try:
        layers = [
            (
                Tensor(arrays[f"layers.{idx}.weight"], requires_grad=True),
                Tensor(arrays[f"layers.{idx}.bias"], requires_grad=True),
            )
            for idx in range(len(meta["hidden"]) + 1)
        ]
        norm = NormalizationSpec(divisors=meta["divisors"], latency_scale=meta["latency_scale"])
        return SpeedMLP(layers=layers, norm=norm)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"Inconsistent speed model checkpoint: {exc!r}") from exc
