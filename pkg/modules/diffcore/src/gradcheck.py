"""Central finite-difference comparison against the backward pass."""

from typing import Callable, Sequence

import numpy as np
from attrs import define

from .tensor import Tensor, no_grad


@define
class GradCheck:
    max_rel_err: float
    max_abs_err: float

    def ok(self, rtol: float = 1e-4, atol: float = 1e-8) -> bool:
        return self.max_rel_err <= rtol and self.max_abs_err <= atol


def grad_check(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    small: float = 1e-8,
) -> GradCheck:
    """
    Compare analytic gradients of the scalar ``fn()`` with central differences.

    Elements whose analytic gradient is below ``small`` in magnitude are
    compared absolutely, the rest relatively.
    """
    for param in inputs:
        param.zero_grad()
    fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in inputs]

    max_rel = 0.0
    max_abs = 0.0
    with no_grad():
        for param, exact in zip(inputs, analytic):
            param.data = np.require(param.data, requirements="C")
            flat = param.data.reshape(-1)
            for idx in range(flat.size):
                saved = flat[idx]
                flat[idx] = saved + h
                upper = fn().item()
                flat[idx] = saved - h
                lower = fn().item()
                flat[idx] = saved
                numeric = (upper - lower) / (2 * h)
                value = exact.reshape(-1)[idx]
                if abs(value) < small:
                    max_abs = max(max_abs, abs(value - numeric))
                else:
                    max_rel = max(max_rel, abs(value - numeric) / max(abs(value), abs(numeric)))
    return GradCheck(max_rel_err=max_rel, max_abs_err=max_abs)
