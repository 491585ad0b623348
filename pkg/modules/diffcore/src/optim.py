"""Adam with bias correction, as a pure step function and a grouped optimizer."""

from typing import Mapping, Sequence

import numpy as np
from attrs import define, field

from .tensor import Tensor


@define
class AdamState:
    """First/second moments for a list of parameters plus the step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = field(default=0)
    m: list[np.ndarray | None] = field(factory=list, repr=False)
    v: list[np.ndarray | None] = field(factory=list, repr=False)

    @t.validator
    def _validate_t(self, attribute, value: int) -> None:
        if value < 0:
            raise ValueError(f"{attribute.name} must be >= 0, got {value}")


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
) -> AdamState:
    """
    Apply one Adam update in place.

    Parameters whose gradient is ``None`` are left untouched, moments included.
    The step counter advances once per call.
    """
    if not state.m:
        state.m = [None] * len(params)
        state.v = [None] * len(params)
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t

    for idx, (param, grad) in enumerate(zip(params, grads)):
        if grad is None:
            continue
        if state.m[idx] is None:
            state.m[idx] = np.zeros_like(param.data)
            state.v[idx] = np.zeros_like(param.data)
        m, v = state.m[idx], state.v[idx]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (grad * grad)
        param.data -= (state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(param.dtype)
    return state


class Adam:
    """Adam over named parameter groups, each with its own learning rate."""

    def __init__(
        self,
        groups: Mapping[str, Sequence[Tensor]],
        lr: float | Mapping[str, float],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.groups = {name: list(params) for name, params in groups.items()}
        self.states = {
            name: AdamState(
                lr=lr[name] if isinstance(lr, Mapping) else lr,
                beta1=beta1,
                beta2=beta2,
                eps=eps,
            )
            for name in self.groups
        }

    @property
    def params(self) -> list[Tensor]:
        return [param for params in self.groups.values() for param in params]

    def zero_grad(self) -> None:
        for param in self.params:
            param.zero_grad()

    def step(self) -> None:
        for name, params in self.groups.items():
            adam_step(params, [param.grad for param in params], self.states[name])

    def scale_lr(self, factor: float) -> None:
        for state in self.states.values():
            state.lr *= factor

    def lr(self, group: str) -> float:
        return self.states[group].lr

    def state_dict(self) -> dict[str, np.ndarray]:
        """Flatten moments, step counters and learning rates into named arrays."""
        flat: dict[str, np.ndarray] = {}
        for name, state in self.states.items():
            flat[f"{name}.t"] = np.asarray(state.t)
            flat[f"{name}.lr"] = np.asarray(state.lr)
            for idx, (m, v) in enumerate(zip(state.m, state.v)):
                if m is not None and v is not None:
                    flat[f"{name}.{idx}.m"] = m
                    flat[f"{name}.{idx}.v"] = v
        return flat

    def load_state_dict(self, flat: Mapping[str, np.ndarray]) -> None:
        for name, state in self.states.items():
            state.t = int(flat[f"{name}.t"])
            state.lr = float(flat[f"{name}.lr"])
            count = len(self.groups[name])
            state.m = [None] * count
            state.v = [None] * count
            for idx in range(count):
                if f"{name}.{idx}.m" in flat:
                    state.m[idx] = np.array(flat[f"{name}.{idx}.m"])
                    state.v[idx] = np.array(flat[f"{name}.{idx}.v"])
