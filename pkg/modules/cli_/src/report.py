"""Text reports rendered from the templates in the run configuration."""

from typing import Any

from diffcore import no_grad
from jinja2 import Environment
from speedmodel import SpeedMLP, predict
from srnet import CompactModel


def render(template: str, **kwargs: Any) -> str:
    text = Environment(keep_trailing_newline=True).from_string(template).render(**kwargs)
    return text if text.endswith("\n") else f"{text}\n"


def predicted_latency(compact: CompactModel, speed: SpeedMLP, v0: float = 0.0) -> float:
    """``v0`` plus the predicted latency of every kept block."""
    with no_grad():
        return v0 + sum(predict(speed, widths).item() for widths in compact.widths())
