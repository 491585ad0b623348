"""Search objective: the latency hinge and its weighted sum with the reconstruction loss."""

from diffcore import Tensor, add, as_tensor, relu, scale, shift


def speed_loss(v_n: Tensor | float, v_t: float) -> Tensor:
    """``max(0, v_n - v_t)``; at ``v_n == v_t`` both value and gradient are zero."""
    return relu(shift(as_tensor(v_n), -v_t))


def total_loss(l_sr: Tensor | float, l_spd: Tensor | float, gamma: float) -> Tensor:
    return add(as_tensor(l_sr), scale(as_tensor(l_spd), gamma))
